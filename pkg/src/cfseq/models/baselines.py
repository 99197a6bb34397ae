"""Plain supervised LSTM baseline.

Same covariates as the balanced encoder but conditioned on the *current*
treatment, trained with a one-step squared-error loss and no balancing
objective.  It only supports one-step-ahead counterfactual queries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..features import (ENCODER_INPUT_SIZE, N_COVARIATES, FeatureScaler,
                        PaddedBatch, current_treatment_inputs, history_inputs)
from ..nn import (init_lstm, init_mlp_head, lstm_step, mlp_head, onehot,
                  squared_error)
from ..simulator import N_TREATMENTS, CounterfactualBranchSet, Trajectory


@dataclass
class RnnConfig:
    hidden: int = 24
    head_hidden: int = 24
    dropout: float = 0.1

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "head_hidden": self.head_hidden,
                "dropout": self.dropout}

    @classmethod
    def from_dict(cls, d: dict) -> "RnnConfig":
        return cls(**d)


@dataclass
class RnnBaseline:
    config: RnnConfig
    scaler: FeatureScaler
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: RnnConfig, scaler: FeatureScaler,
             rng: np.random.Generator) -> "RnnBaseline":
        model = cls(config, scaler)
        init_lstm(model.params, "lstm_", ENCODER_INPUT_SIZE, config.hidden, rng)
        init_mlp_head(model.params, "gy_", config.hidden,
                      config.head_hidden, 1, rng)
        return model

    def forward(self, batch: PaddedBatch, training: bool = False,
                rng: np.random.Generator | None = None,
                weights: np.ndarray | None = None) -> dict:
        """Masked (optionally reweighted) one-step squared-error loss.

        ``weights`` has batch shape (B, T) and multiplies the mask, which is
        how the reweighted variant reuses this forward.
        """
        cfg = self.config
        B, T, _ = batch.inputs.shape
        h = ad.constant(np.zeros((B, cfg.hidden)))
        c = ad.constant(np.zeros((B, cfg.hidden)))
        rec_mask = None
        if training and cfg.dropout > 0.0:
            rec_mask = ad.variational_dropout_mask((B, cfg.hidden),
                                                   cfg.dropout, rng)
        hs = []
        for t in range(T):
            x = ad.constant(batch.inputs[:, t, :])
            h, c = lstm_step(self.params, "lstm_", x, h, c, cfg.hidden,
                             rec_mask)
            hs.append(h)
        h_all = ad.concat(hs, axis=0)
        y_hat = mlp_head(self.params, "gy_", h_all)
        w = batch.mask if weights is None else batch.mask * weights
        w_flat = w.T.reshape(-1)
        loss = ad.scale(squared_error(y_hat, batch.targets_y.T.reshape(-1),
                                      w_flat), 1.0 / float(w_flat.sum()))
        return {"loss": loss, "y_hat": y_hat, "h_all": h_all}

    def _prefix_states(self, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
        """Hidden/cell states after each factual step, (T, H) each."""
        cfg = self.config
        inputs = current_treatment_inputs(traj, self.scaler)
        h = ad.constant(np.zeros((1, cfg.hidden)))
        c = ad.constant(np.zeros((1, cfg.hidden)))
        hs, cs = [], []
        for t in range(traj.length):
            h, c = lstm_step(self.params, "lstm_", ad.constant(inputs[t:t + 1]),
                             h, c, cfg.hidden)
            hs.append(h.data[0])
            cs.append(c.data[0])
        return np.array(hs), np.array(cs)

    def predict_branch_sets(self, dataset: list[Trajectory],
                            branch_sets: list[CounterfactualBranchSet]
                            ) -> list[np.ndarray]:
        """One-step counterfactual predictions (volumes at t+1)."""
        if any(bs.tau != 1 for bs in branch_sets):
            raise ValueError("the supervised baseline only answers tau=1 "
                             "queries")
        by_id = {t.patient_id: t for t in dataset}
        states: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        rows_x, rows_h, rows_c, owner = [], [], [], []
        for i, bs in enumerate(branch_sets):
            traj = by_id[bs.patient_id]
            if bs.patient_id not in states:
                states[bs.patient_id] = self._prefix_states(traj)
            hs, cs = states[bs.patient_id]
            a = bs.t - 1
            base = history_inputs(traj, self.scaler)[a, :N_COVARIATES]
            for p in range(len(bs.plans)):
                rows_x.append(np.concatenate([
                    base, onehot(bs.plans[p], N_TREATMENTS)[0],
                    traj.subgroup_onehot()]))
                if a == 0:
                    rows_h.append(np.zeros(self.config.hidden))
                    rows_c.append(np.zeros(self.config.hidden))
                else:
                    rows_h.append(hs[a - 1])
                    rows_c.append(cs[a - 1])
                owner.append(i)
        h, c = lstm_step(self.params, "lstm_", ad.constant(np.array(rows_x)),
                         ad.constant(np.array(rows_h)),
                         ad.constant(np.array(rows_c)), self.config.hidden)
        y = mlp_head(self.params, "gy_", h).data[:, 0]
        y = self.scaler.denorm_y(y)
        owner = np.array(owner)
        return [y[owner == i] for i in range(len(branch_sets))]

    def save(self, path) -> None:
        ad.save_checkpoint(path, self.params,
                           {"config": self.config.to_dict(),
                            "scaler": self.scaler.to_dict()})

    @classmethod
    def load(cls, path) -> "RnnBaseline":
        meta = ad.read_checkpoint_meta(path)
        model = cls.init(RnnConfig.from_dict(meta["config"]),
                         FeatureScaler.from_dict(meta["scaler"]),
                         np.random.default_rng(0))
        ad.load_checkpoint(path, model.params)
        return model
