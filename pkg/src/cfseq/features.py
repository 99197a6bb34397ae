"""Feature construction shared by all sequence models.

The observed covariate at step t is the tumour volume; drug concentration is
latent simulator state that models must infer from the treatment history (it
is still carried on trajectories and used by the balancing diagnostic's
raw-history features, lagged one day so that the current dose never leaks).
Volumes are z-scored with training-set statistics for model inputs; outcome
targets are normalized by the maximum tumour volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import V_MAX, onehot
from .simulator import N_TREATMENTS, Trajectory


@dataclass
class FeatureScaler:
    vol_mean: float
    vol_std: float
    conc_mean: float
    conc_std: float

    @classmethod
    def fit(cls, dataset: list[Trajectory]) -> "FeatureScaler":
        vols = np.concatenate([t.volumes[:-1] for t in dataset])
        concs = np.concatenate([prev_concentration(t) for t in dataset])
        return cls(vol_mean=float(vols.mean()), vol_std=float(vols.std() + 1e-12),
                   conc_mean=float(concs.mean()), conc_std=float(concs.std() + 1e-12))

    def z_vol(self, v):
        return (np.asarray(v) - self.vol_mean) / self.vol_std

    def z_conc(self, c):
        return (np.asarray(c) - self.conc_mean) / self.conc_std

    def norm_y(self, v):
        return np.asarray(v) / V_MAX

    def denorm_y(self, y):
        return np.asarray(y) * V_MAX

    def to_dict(self) -> dict:
        return {"vol_mean": self.vol_mean, "vol_std": self.vol_std,
                "conc_mean": self.conc_mean, "conc_std": self.conc_std}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(**d)


def prev_concentration(traj: Trajectory) -> np.ndarray:
    """C(t-1) aligned with step t; zero before the first dose."""
    return np.concatenate([[0.0], traj.chemo_conc[:-1]])


def prev_treatment_onehot(traj: Trajectory) -> np.ndarray:
    """One-hot of A(t-1) aligned with step t; no-treatment before step 1."""
    labels = np.concatenate([[0], traj.treatments[:-1]])
    return onehot(labels, N_TREATMENTS)


def covariates(traj: Trajectory, scaler: FeatureScaler) -> np.ndarray:
    """(T, 1) z-scored observed covariates (tumour volume)."""
    return scaler.z_vol(traj.volumes[:-1]).reshape(-1, 1)


N_COVARIATES = 1


def history_inputs(traj: Trajectory, scaler: FeatureScaler) -> np.ndarray:
    """(T, 8) representation-network inputs: [X_t, A_{t-1} one-hot, static]."""
    T = traj.length
    return np.hstack([covariates(traj, scaler),
                      prev_treatment_onehot(traj),
                      np.tile(traj.subgroup_onehot(), (T, 1))])


def current_treatment_inputs(traj: Trajectory, scaler: FeatureScaler) -> np.ndarray:
    """(T, 8) supervised-baseline inputs: [X_t, A_t one-hot, static]."""
    T = traj.length
    return np.hstack([covariates(traj, scaler),
                      onehot(traj.treatments, N_TREATMENTS),
                      np.tile(traj.subgroup_onehot(), (T, 1))])


ENCODER_INPUT_SIZE = N_COVARIATES + N_TREATMENTS + 3
DECODER_INPUT_SIZE = 1 + N_TREATMENTS + 3


@dataclass
class PaddedBatch:
    """Padded (B, T_max, D) batch with a validity mask."""

    inputs: np.ndarray   # (B, T, D)
    targets_y: np.ndarray  # (B, T) normalized outcomes
    targets_a: np.ndarray  # (B, T) treatment labels
    mask: np.ndarray     # (B, T) 1 on valid steps
    static: np.ndarray   # (B, 3)
    lengths: np.ndarray  # (B,)


def pad_batch(dataset: list[Trajectory], scaler: FeatureScaler,
              input_fn=history_inputs) -> PaddedBatch:
    B = len(dataset)
    T = max(t.length for t in dataset)
    D = input_fn(dataset[0], scaler).shape[1]
    inputs = np.zeros((B, T, D))
    targets_y = np.zeros((B, T))
    targets_a = np.zeros((B, T), dtype=np.int64)
    mask = np.zeros((B, T))
    static = np.zeros((B, 3))
    lengths = np.zeros(B, dtype=np.int64)
    for i, traj in enumerate(dataset):
        L = traj.length
        inputs[i, :L] = input_fn(traj, scaler)
        targets_y[i, :L] = scaler.norm_y(traj.volumes[1:])
        targets_a[i, :L] = traj.treatments
        mask[i, :L] = 1.0
        static[i] = traj.subgroup_onehot()
        lengths[i] = L
    return PaddedBatch(inputs, targets_y, targets_a, mask, static, lengths)
