"""Counterfactual treatment-effect estimation over time.

Library layout:

- ``cfseq.autodiff``   -- minimal reverse-mode autodiff over dense float64 arrays,
  including a gradient-reversal operator and an Adam optimizer.
- ``cfseq.simulator``  -- PK-PD tumour-growth simulator with controllable
  time-dependent confounding and ground-truth counterfactual generation.
- ``cfseq.models``     -- all estimators under comparison: the adversarially
  balanced encoder/decoder, its no-adversary variant, a baseline recurrent
  predictor, linear regression, MSM with stabilized IPTW and RMSN.
- ``cfseq.training``   -- two-stage training loop (encoder, then decoder on
  representation-anchored windows), the adversary-strength schedule and
  random hyperparameter search.
- ``cfseq.evaluation`` -- counterfactual RMSE per horizon, treatment/timing
  selection accuracy, balancing diagnostics and the discrete optimal-classifier
  verification.
- ``cfseq.cli``        -- reproducible experiment orchestration (simulate,
  train, evaluate, sweep, search, export-repr).
"""

__version__ = "0.1.0"
