"""Training loops for the sequence models.

The balanced model trains in two phases.  First the encoder learns jointly
from the one-step outcome loss and the treatment classifier reached through
gradient reversal, with the reversal strength ramped over epochs.  Then the
decoder trains the same way on fixed-length windows whose initial state is
the frozen encoder representation at the window's anchor.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .features import (FeatureScaler, PaddedBatch, current_treatment_inputs,
                       history_inputs, pad_batch)
from .models.baselines import RnnBaseline, RnnConfig
from .models.crn import CrnConfig, CrnDecoder, CrnEncoder, CrnModel
from .models.msm import stabilized_weights
from .models.rmsn import (PropensityRnn, RmsnModel, _numerator_inputs,
                          treatment_bits)
from .nn import V_MAX, onehot
from .simulator import N_TREATMENTS, Trajectory


@dataclass
class TrainConfig:
    epochs: int = 50
    decoder_epochs: int | None = None   # defaults to ``epochs``
    batch_size: int = 64
    decoder_batch_size: int | None = None   # defaults to ``batch_size``
    learning_rate: float = 0.01
    lambda_max: float = 1.0
    max_grad_norm: float | None = None
    tau_max: int = 5
    seed: int = 0
    literal_epoch_lambda: bool = False

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lambda_schedule(epoch: int, epochs: int, lambda_max: float,
                    literal_epoch: bool = False) -> float:
    """Reversal-strength ramp lambda_max * (2 / (1 + exp(-10 p)) - 1).

    ``p`` is training progress epoch/epochs by default; the literal variant
    uses the raw epoch index, which saturates after the first few epochs.
    """
    p = float(epoch) if literal_epoch else epoch / float(epochs)
    return lambda_max * (2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0)


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def _slice_batch(batch: PaddedBatch, idx: np.ndarray) -> PaddedBatch:
    return PaddedBatch(batch.inputs[idx], batch.targets_y[idx],
                       batch.targets_a[idx], batch.mask[idx],
                       batch.static[idx], batch.lengths[idx])


def write_training_log(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _masked_rmse(pred: np.ndarray, target: np.ndarray,
                 mask: np.ndarray) -> float:
    """RMSE in volume units over the unpadded steps of a flattened batch."""
    err = (pred - target) ** 2 * mask
    return V_MAX * math.sqrt(err.sum() / mask.sum())


def train_encoder(dataset: list[Trajectory], scaler: FeatureScaler,
                  config: CrnConfig, tc: TrainConfig,
                  log: list[dict] | None = None,
                  val: list[Trajectory] | None = None) -> CrnEncoder:
    rng = np.random.default_rng(tc.seed)
    encoder = CrnEncoder(config, rng)
    opt = ad.AdamState(learning_rate=tc.learning_rate,
                       max_grad_norm=tc.max_grad_norm)
    batch = pad_batch(dataset, scaler, history_inputs)
    vb = pad_batch(val, scaler, history_inputs) if val else None
    for epoch in range(tc.epochs):
        lam = lambda_schedule(epoch, tc.epochs, tc.lambda_max,
                              tc.literal_epoch_lambda)
        sums = np.zeros(2)
        nb = 0
        for idx in _minibatches(len(dataset), tc.batch_size, rng):
            mb = _slice_batch(batch, idx)
            with ad.tape_context() as tape:
                out = encoder.forward(mb, lam=lam, training=True, rng=rng)
                grads = ad.backward(tape, out["loss"])
            ad.adam_step(opt, encoder.params, grads)
            sums += (out["outcome_loss"].data, out["adv_loss"].data)
            nb += 1
        if log is not None:
            row = {"phase": "encoder", "epoch": epoch, "lambda": lam,
                   "outcome_loss": sums[0] / nb,
                   "treatment_loss": sums[1] / nb, "validation_rmse": ""}
            if vb is not None:
                vo = encoder.forward(vb)
                row["validation_rmse"] = _masked_rmse(
                    vo["y_hat"].data[:, 0], vb.targets_y.T.reshape(-1),
                    vb.mask.T.reshape(-1))
            log.append(row)
    return encoder


@dataclass
class DecoderWindows:
    """Fixed-length training windows for the decoder phase."""

    init_repr: np.ndarray  # (N, R)
    inputs: np.ndarray     # (N, tau, 8)
    targets_y: np.ndarray  # (N, tau)
    labels: np.ndarray     # (N, tau)
    weights: np.ndarray    # (N,)


def make_decoder_windows(dataset: list[Trajectory], scaler: FeatureScaler,
                         reprs: dict[int, np.ndarray], tau: int,
                         window_weights: dict[int, np.ndarray] | None = None
                         ) -> DecoderWindows:
    """One window per admissible anchor of every patient.

    ``reprs`` maps patient id to per-step initial states (the encoder's
    balancing representations, or hidden states for the reweighted model);
    the state at the anchor initializes the decoder.  Inputs are teacher
    forced with factual outcomes.
    """
    init, inputs, ys, labels, ws = [], [], [], [], []
    for traj in dataset:
        static = traj.subgroup_onehot()
        y_norm = scaler.norm_y(traj.volumes)
        fac = window_weights.get(traj.patient_id) if window_weights else None
        for a in range(traj.length - tau):
            init.append(reprs[traj.patient_id][a])
            steps = []
            for s in range(tau):
                steps.append(np.concatenate([
                    [y_norm[a + s]],
                    onehot(traj.treatments[a + s:a + s + 1], N_TREATMENTS)[0],
                    static]))
            inputs.append(steps)
            ys.append(y_norm[a + 1:a + tau + 1])
            labels.append(traj.treatments[a:a + tau])
            ws.append(stabilized_weights(fac, a, tau) if fac is not None
                      else 1.0)
    if not init:
        warnings.warn("no decoder windows: every patient is shorter than "
                      f"tau + 1 = {tau + 1}")
    return DecoderWindows(np.array(init), np.array(inputs), np.array(ys),
                          np.array(labels, dtype=np.int64), np.array(ws))


def train_decoder(windows: DecoderWindows, config: CrnConfig, tc: TrainConfig,
                  adversarial: bool = True,
                  log: list[dict] | None = None,
                  val_windows: DecoderWindows | None = None) -> CrnDecoder:
    rng = np.random.default_rng(tc.seed + 1)
    decoder = CrnDecoder(config, rng)
    opt = ad.AdamState(learning_rate=tc.learning_rate,
                       max_grad_norm=tc.max_grad_norm)
    n = len(windows.init_repr)
    tau = windows.inputs.shape[1]
    epochs = tc.decoder_epochs or tc.epochs
    for epoch in range(epochs):
        lam = (lambda_schedule(epoch, epochs, tc.lambda_max,
                               tc.literal_epoch_lambda) if adversarial else 0.0)
        sums = np.zeros(2)
        nb = 0
        for idx in _minibatches(n, tc.decoder_batch_size or tc.batch_size,
                                rng):
            mask = np.tile(windows.weights[idx, None], (1, tau))
            with ad.tape_context() as tape:
                out = decoder.forward(windows.init_repr[idx],
                                      windows.inputs[idx],
                                      windows.targets_y[idx],
                                      windows.labels[idx], mask,
                                      lam=lam, training=True, rng=rng)
                loss = out["loss"] if adversarial else out["outcome_loss"]
                grads = ad.backward(tape, loss)
            ad.adam_step(opt, decoder.params, grads)
            sums += (out["outcome_loss"].data, out["adv_loss"].data)
            nb += 1
        if log is not None:
            row = {"phase": "decoder", "epoch": epoch, "lambda": lam,
                   "outcome_loss": sums[0] / nb,
                   "treatment_loss": sums[1] / nb, "validation_rmse": ""}
            if val_windows is not None:
                vw = val_windows
                vo = decoder.forward(vw.init_repr, vw.inputs, vw.targets_y,
                                     vw.labels, np.ones_like(vw.targets_y))
                row["validation_rmse"] = _masked_rmse(
                    vo["y_hat"].data[:, 0], vw.targets_y.T.reshape(-1),
                    np.ones(vw.targets_y.size))
            log.append(row)
    return decoder


def train_crn(dataset: list[Trajectory], config: CrnConfig | None = None,
              tc: TrainConfig | None = None,
              scaler: FeatureScaler | None = None,
              log: list[dict] | None = None,
              val: list[Trajectory] | None = None) -> CrnModel:
    config = config or CrnConfig()
    tc = tc or TrainConfig()
    scaler = scaler or FeatureScaler.fit(dataset)
    encoder = train_encoder(dataset, scaler, config, tc, log, val=val)
    reprs = encoder.representations(dataset, scaler)
    windows = make_decoder_windows(dataset, scaler, reprs, tc.tau_max)
    val_windows = None
    if val:
        val_windows = make_decoder_windows(
            val, scaler, encoder.representations(val, scaler), tc.tau_max)
    decoder = train_decoder(windows, config, tc, adversarial=True, log=log,
                            val_windows=val_windows)
    return CrnModel(config, scaler, encoder, decoder,
                    meta={"train": tc.to_dict()})


def train_rnn_baseline(dataset: list[Trajectory],
                       config: RnnConfig | None = None,
                       tc: TrainConfig | None = None,
                       scaler: FeatureScaler | None = None,
                       weights: np.ndarray | None = None,
                       log: list[dict] | None = None) -> RnnBaseline:
    config = config or RnnConfig()
    tc = tc or TrainConfig()
    scaler = scaler or FeatureScaler.fit(dataset)
    rng = np.random.default_rng(tc.seed)
    model = RnnBaseline.init(config, scaler, rng)
    opt = ad.AdamState(learning_rate=tc.learning_rate,
                       max_grad_norm=tc.max_grad_norm)
    batch = pad_batch(dataset, scaler, current_treatment_inputs)
    for epoch in range(tc.epochs):
        total = 0.0
        nb = 0
        for idx in _minibatches(len(dataset), tc.batch_size, rng):
            mb = _slice_batch(batch, idx)
            w = weights[idx] if weights is not None else None
            with ad.tape_context() as tape:
                out = model.forward(mb, training=True, rng=rng, weights=w)
                grads = ad.backward(tape, out["loss"])
            ad.adam_step(opt, model.params, grads)
            total += out["loss"].data
            nb += 1
        if log is not None:
            log.append({"phase": "rnn", "epoch": epoch, "lambda": 0.0,
                        "outcome_loss": total / nb, "treatment_loss": 0.0,
                        "validation_rmse": ""})
    return model


def train_propensity_rnn(dataset: list[Trajectory], scaler: FeatureScaler,
                         input_fn, hidden: int, tc: TrainConfig,
                         log: list[dict] | None = None,
                         phase: str = "propensity") -> PropensityRnn:
    rng = np.random.default_rng(tc.seed)
    batch = pad_batch(dataset, scaler, input_fn)
    model = PropensityRnn.init(hidden, batch.inputs.shape[2], rng)
    bits = np.zeros(batch.mask.shape + (2,))
    for i, traj in enumerate(dataset):
        bits[i, :traj.length] = treatment_bits(traj)
    opt = ad.AdamState(learning_rate=tc.learning_rate,
                       max_grad_norm=tc.max_grad_norm)
    for epoch in range(tc.epochs):
        total = 0.0
        nb = 0
        for idx in _minibatches(len(dataset), tc.batch_size, rng):
            with ad.tape_context() as tape:
                out = model.forward(batch.inputs[idx], bits[idx],
                                    batch.mask[idx])
                grads = ad.backward(tape, out["loss"])
            ad.adam_step(opt, model.params, grads)
            total += out["loss"].data
            nb += 1
        if log is not None:
            log.append({"phase": phase, "epoch": epoch, "lambda": 0.0,
                        "outcome_loss": total / nb, "treatment_loss": 0.0,
                        "validation_rmse": ""})
    return model


def train_rmsn(dataset: list[Trajectory], config: RnnConfig | None = None,
               tc: TrainConfig | None = None,
               scaler: FeatureScaler | None = None,
               log: list[dict] | None = None) -> RmsnModel:
    config = config or RnnConfig()
    tc = tc or TrainConfig()
    scaler = scaler or FeatureScaler.fit(dataset)
    prop_num = train_propensity_rnn(dataset, scaler, _numerator_inputs,
                                    config.hidden // 2, tc, log,
                                    "propensity_num")
    prop_den = train_propensity_rnn(dataset, scaler, history_inputs,
                                    config.hidden // 2, tc, log,
                                    "propensity_den")
    model = RmsnModel(scaler, prop_num, prop_den, None, None)
    weights = model.encoder_weights(dataset)
    model.encoder = train_rnn_baseline(dataset, config, tc, scaler,
                                       weights=weights, log=log)
    factors = model.step_factors(dataset)
    reprs = {}
    for traj in dataset:
        hs, _ = model.encoder._prefix_states(traj)
        # decoder at anchor a starts from the state after step a-1
        reprs[traj.patient_id] = np.vstack([np.zeros(config.hidden),
                                            hs[:-1]])
    windows = make_decoder_windows(dataset, scaler, reprs, tc.tau_max,
                                   window_weights=factors)
    lo, hi = np.percentile(windows.weights, (1.0, 99.0))
    windows.weights = np.clip(windows.weights, lo, hi)
    dec_config = CrnConfig(repr_size=config.hidden,
                           dropout=config.dropout)
    model.decoder = train_decoder(windows, dec_config, tc,
                                  adversarial=False, log=log)
    return model


@dataclass
class SearchResult:
    params: dict
    score: float
    trials: list[dict] = field(default_factory=list)


def random_search(train_and_score, space: dict, n_trials: int,
                  seed: int = 0) -> SearchResult:
    """Random hyperparameter search.

    ``space`` maps parameter names to lists of candidate values;
    ``train_and_score(params)`` returns a validation score to minimize.
    """
    rng = np.random.default_rng(seed)
    best = None
    trials = []
    for _ in range(n_trials):
        params = {k: v[rng.integers(len(v))] for k, v in space.items()}
        score = float(train_and_score(params))
        trials.append({**params, "score": score})
        if best is None or score < best.score:
            best = SearchResult(params, score)
    best.trials = trials
    return best
