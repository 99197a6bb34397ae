"""Adversarially balanced encoder/decoder for counterfactual prediction.

The encoder runs an LSTM over treatment histories and maps each hidden state
through an ELU layer to a balancing representation.  Two heads share that
representation: an outcome regressor, and a treatment classifier reached
through a gradient-reversal layer so that representations are pushed toward
treatment invariance while the classifier itself trains normally.

The decoder is a second LSTM initialized from the encoder representation at
the anchor time.  Each step consumes the previous (normalized) outcome, the
planned treatment one-hot, and the static subgroup features, and carries its
own balancing representation and head pair.  The classifier at step s sees
the representation from before that step's treatment was fed in, mirroring
the encoder's invariance contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..features import (DECODER_INPUT_SIZE, ENCODER_INPUT_SIZE, FeatureScaler,
                        PaddedBatch, history_inputs, pad_batch)
from ..nn import (cross_entropy, elu_dense, init_dense, init_lstm,
                  init_mlp_head, lstm_step, mlp_head, onehot, squared_error)
from ..simulator import N_TREATMENTS, CounterfactualBranchSet, Trajectory


@dataclass
class CrnConfig:
    hidden: int = 24
    repr_size: int = 12
    head_hidden: int = 24
    dropout: float = 0.1
    decoder_repr: int = 12
    decoder_head_hidden: int = 24

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "repr_size": self.repr_size,
                "head_hidden": self.head_hidden, "dropout": self.dropout,
                "decoder_repr": self.decoder_repr,
                "decoder_head_hidden": self.decoder_head_hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "CrnConfig":
        return cls(**d)


def _forward_losses(phi_pred: ad.Tensor, phi_clf: ad.Tensor, params: dict,
                    targets_y: np.ndarray, labels: np.ndarray,
                    mask: np.ndarray, lam: float) -> dict:
    """Shared head plumbing for encoder and decoder forwards."""
    msum = float(mask.sum())
    y_hat = mlp_head(params, "gy_", phi_pred)
    logits = mlp_head(params, "ga_", ad.gradient_reversal(phi_clf, lam))
    outcome = ad.scale(squared_error(y_hat, targets_y, mask), 1.0 / msum)
    adv = ad.scale(cross_entropy(logits, onehot(labels, N_TREATMENTS), mask),
                   1.0 / msum)
    loss = ad.add(outcome, adv)
    return {"loss": loss, "outcome_loss": outcome, "adv_loss": adv,
            "y_hat": y_hat, "logits": logits}


class CrnEncoder:
    """LSTM encoder with balancing representation and dual heads."""

    def __init__(self, config: CrnConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        init_lstm(self.params, "lstm_", ENCODER_INPUT_SIZE, config.hidden, rng)
        init_dense(self.params, "phi_", config.hidden, config.repr_size, rng)
        init_mlp_head(self.params, "gy_", config.repr_size,
                      config.head_hidden, 1, rng)
        init_mlp_head(self.params, "ga_", config.repr_size,
                      config.head_hidden, N_TREATMENTS, rng)

    def forward(self, batch: PaddedBatch, lam: float = 0.0,
                training: bool = False,
                rng: np.random.Generator | None = None) -> dict:
        cfg = self.config
        B, T, _ = batch.inputs.shape
        h = ad.constant(np.zeros((B, cfg.hidden)))
        c = ad.constant(np.zeros((B, cfg.hidden)))
        rec_mask = None
        if training and cfg.dropout > 0.0:
            rec_mask = ad.variational_dropout_mask((B, cfg.hidden),
                                                   cfg.dropout, rng)
        phis = []
        for t in range(T):
            x = ad.constant(batch.inputs[:, t, :])
            h, c = lstm_step(self.params, "lstm_", x, h, c, cfg.hidden, rec_mask)
            phis.append(elu_dense(self.params, "phi_", h))
        phi_all = ad.concat(phis, axis=0)  # time-major (T*B, R)
        out = _forward_losses(phi_all, phi_all, self.params,
                              batch.targets_y.T.reshape(-1),
                              batch.targets_a.T.reshape(-1),
                              batch.mask.T.reshape(-1), lam)
        out["phi"] = phi_all
        return out

    def representations(self, dataset: list[Trajectory],
                        scaler: FeatureScaler) -> dict[int, np.ndarray]:
        """Per-patient (T, repr_size) balancing representations, no dropout."""
        batch = pad_batch(dataset, scaler, history_inputs)
        res = self.forward(batch)
        B, T, _ = batch.inputs.shape
        phi = res["phi"].data.reshape(T, B, self.config.repr_size)
        return {traj.patient_id: phi[:batch.lengths[i], i, :]
                for i, traj in enumerate(dataset)}

    def predictions(self, batch: PaddedBatch) -> np.ndarray:
        """(B, T) one-step-ahead normalized outcome predictions."""
        res = self.forward(batch)
        B, T, _ = batch.inputs.shape
        return res["y_hat"].data.reshape(T, B).T


class CrnDecoder:
    """LSTM decoder over planned treatment sequences.

    The hidden state has the encoder's representation size so that the anchor
    representation initializes it directly.
    """

    def __init__(self, config: CrnConfig, rng: np.random.Generator):
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        init_lstm(self.params, "lstm_", DECODER_INPUT_SIZE,
                  config.repr_size, rng)
        init_dense(self.params, "phi_", config.repr_size,
                   config.decoder_repr, rng)
        init_mlp_head(self.params, "gy_", config.decoder_repr,
                      config.decoder_head_hidden, 1, rng)
        init_mlp_head(self.params, "ga_", config.decoder_repr,
                      config.decoder_head_hidden, N_TREATMENTS, rng)

    def forward(self, init_repr: np.ndarray, inputs: np.ndarray,
                targets_y: np.ndarray, labels: np.ndarray, mask: np.ndarray,
                lam: float = 0.0, training: bool = False,
                rng: np.random.Generator | None = None) -> dict:
        """Teacher-forced forward over (B, tau, D) planned windows."""
        cfg = self.config
        B, tau, _ = inputs.shape
        h = ad.constant(init_repr)
        c = ad.constant(np.zeros((B, cfg.repr_size)))
        rec_mask = None
        if training and cfg.dropout > 0.0:
            rec_mask = ad.variational_dropout_mask((B, cfg.repr_size),
                                                   cfg.dropout, rng)
        phis = [elu_dense(self.params, "phi_", h)]
        for s in range(tau):
            x = ad.constant(inputs[:, s, :])
            h, c = lstm_step(self.params, "lstm_", x, h, c, cfg.repr_size,
                             rec_mask)
            phis.append(elu_dense(self.params, "phi_", h))
        phi_pred = ad.concat(phis[1:], axis=0)   # post-step, for outcomes
        phi_clf = ad.concat(phis[:-1], axis=0)   # pre-step, for balancing
        return _forward_losses(phi_pred, phi_clf, self.params,
                               targets_y.T.reshape(-1),
                               labels.T.reshape(-1),
                               mask.T.reshape(-1), lam)

    def predict(self, init_repr: np.ndarray, y0: np.ndarray,
                plans: np.ndarray, static: np.ndarray) -> np.ndarray:
        """Autoregressive rollout; returns (B, tau) normalized predictions."""
        cfg = self.config
        B, tau = plans.shape
        h = ad.constant(init_repr)
        c = ad.constant(np.zeros((B, cfg.repr_size)))
        y_prev = np.asarray(y0, dtype=float)
        outs = []
        for s in range(tau):
            x = np.hstack([y_prev.reshape(-1, 1),
                           onehot(plans[:, s], N_TREATMENTS), static])
            h, c = lstm_step(self.params, "lstm_", ad.constant(x), h, c,
                             cfg.repr_size)
            phi = elu_dense(self.params, "phi_", h)
            y_prev = mlp_head(self.params, "gy_", phi).data[:, 0]
            outs.append(y_prev)
        return np.column_stack(outs)


@dataclass
class CrnModel:
    """Trained encoder/decoder pair plus its feature scaler."""

    config: CrnConfig
    scaler: FeatureScaler
    encoder: CrnEncoder
    decoder: CrnDecoder
    meta: dict = field(default_factory=dict)

    def predict_branch_sets(self, dataset: list[Trajectory],
                            branch_sets: list[CounterfactualBranchSet]
                            ) -> list[np.ndarray]:
        """Predicted Y(t+tau) per plan, one array per branch set (volumes)."""
        by_id = {t.patient_id: t for t in dataset}
        reprs = self.encoder.representations(dataset, self.scaler)
        out: list[np.ndarray] = []
        groups: dict[int, list[int]] = {}
        for i, bs in enumerate(branch_sets):
            groups.setdefault(bs.tau, []).append(i)
        results: dict[int, np.ndarray] = {}
        for tau, idxs in groups.items():
            rows_repr, rows_y0, rows_plan, rows_static, owner = [], [], [], [], []
            for i in idxs:
                bs = branch_sets[i]
                traj = by_id[bs.patient_id]
                a = bs.t - 1
                for p in range(len(bs.plans)):
                    rows_repr.append(reprs[bs.patient_id][a])
                    rows_y0.append(self.scaler.norm_y(traj.volumes[a]))
                    rows_plan.append(bs.plans[p])
                    rows_static.append(traj.subgroup_onehot())
                    owner.append(i)
            preds = self.decoder.predict(np.array(rows_repr),
                                         np.array(rows_y0),
                                         np.array(rows_plan),
                                         np.array(rows_static))
            final = self.scaler.denorm_y(preds[:, -1])
            owner = np.array(owner)
            for i in idxs:
                results[i] = final[owner == i]
        for i in range(len(branch_sets)):
            out.append(results[i])
        return out

    def save(self, enc_path, dec_path) -> None:
        meta = {"config": self.config.to_dict(),
                "scaler": self.scaler.to_dict(), **self.meta}
        ad.save_checkpoint(enc_path, self.encoder.params, meta)
        ad.save_checkpoint(dec_path, self.decoder.params, meta)

    @classmethod
    def load(cls, enc_path, dec_path) -> "CrnModel":
        meta = ad.read_checkpoint_meta(enc_path)
        config = CrnConfig.from_dict(meta["config"])
        scaler = FeatureScaler.from_dict(meta["scaler"])
        rng = np.random.default_rng(0)
        enc = CrnEncoder(config, rng)
        dec = CrnDecoder(config, rng)
        ad.load_checkpoint(enc_path, enc.params)
        ad.load_checkpoint(dec_path, dec.params)
        extra = {k: v for k, v in meta.items()
                 if k not in ("config", "scaler")}
        return cls(config, scaler, enc, dec, extra)
