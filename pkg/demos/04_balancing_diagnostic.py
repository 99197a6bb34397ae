"""Check whether the learned representation hides the treatment.

The point of the adversarial objective is a representation whose
distribution does not depend on the treatment about to be assigned.  A
direct way to audit that: freeze the encoder, then train a *fresh*
classifier to predict the day's treatment, once from the representation and
once from the raw recent history.  Balanced representations should support
markedly lower accuracy.

Also exports the representations to CSV; the companion figures package can
project them to 2-D (cfseq-figures project runs/phi.csv phi.png).
"""

import os

from cfseq.evaluation import balancing_diagnostic, export_representations
from cfseq.features import FeatureScaler
from cfseq.models.crn import CrnConfig
from cfseq.simulator import SimConfig, simulate_dataset
from cfseq.training import TrainConfig, train_crn

sim = SimConfig(gamma_c=5.0, gamma_r=5.0, n_patients=300, max_timesteps=40,
                seed=9)
train_set = simulate_dataset(sim)
test_set = simulate_dataset(
    SimConfig.from_dict({**sim.to_dict(), "n_patients": 80}),
    first_patient_id=sim.n_patients)
scaler = FeatureScaler.fit(train_set)

for lambda_max, tag in ((0.0, "no adversary"), (1.0, "adversarial")):
    tc = TrainConfig(epochs=20, decoder_epochs=1, tau_max=2,
                     lambda_max=lambda_max, seed=5)
    model = train_crn(train_set, CrnConfig(), tc, scaler)
    d = balancing_diagnostic(model.encoder, train_set, test_set, scaler)
    print(f"{tag:12s}: classifier accuracy {d['phi_accuracy']:.1%} on "
          f"representations vs {d['raw_accuracy']:.1%} on raw history "
          f"(majority class {d['majority_rate']:.1%})")
    if lambda_max > 0:
        os.makedirs("runs", exist_ok=True)
        export_representations(model.encoder, test_set, scaler, "runs/phi.csv")
        print("wrote runs/phi.csv")
