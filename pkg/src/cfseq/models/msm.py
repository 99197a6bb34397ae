"""Marginal structural model and its unweighted linear twin.

Treatment assignment is decomposed into two binary processes (chemo, radio).
Four logistic regressions estimate stabilized inverse-probability weights:
per process, a numerator model on cumulative past treatment counts and a
denominator model that adds current and previous covariates plus the static
subgroup.  A weighted linear regression per horizon then predicts the
outcome from planned treatment counts and the history features at the
anchor.  The unweighted variant of the same regression is the naive linear
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..features import FeatureScaler, covariates
from ..simulator import CounterfactualBranchSet, Trajectory, label_to_binary


def logistic_fit(X: np.ndarray, y: np.ndarray, l2: float = 1e-4) -> np.ndarray:
    """Ridge-penalized logistic regression weights (intercept included in X)."""

    def nll(w):
        z = X @ w
        # log(1 + exp(z)) - y*z, computed stably
        val = np.logaddexp(0.0, z) - y * z
        return val.sum() + 0.5 * l2 * w @ w

    def grad(w):
        p = 1.0 / (1.0 + np.exp(-(X @ w)))
        return X.T @ (p - y) + l2 * w

    res = minimize(nll, np.zeros(X.shape[1]), jac=grad, method="L-BFGS-B")
    return res.x


def logistic_prob(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-(X @ w)))


def _cumulative_counts(traj: Trajectory) -> np.ndarray:
    """(T, 2) counts of past chemo / radio administrations before each step."""
    bits = np.array([label_to_binary(a) for a in traj.treatments], dtype=float)
    cum = np.cumsum(bits, axis=0)
    return np.vstack([np.zeros(2), cum[:-1]])


def _prev_covariates(X: np.ndarray) -> np.ndarray:
    return np.vstack([np.zeros(X.shape[1]), X[:-1]])


def _num_features(traj: Trajectory) -> np.ndarray:
    T = traj.length
    return np.hstack([np.ones((T, 1)), _cumulative_counts(traj)])


def _den_features(traj: Trajectory, scaler: FeatureScaler) -> np.ndarray:
    T = traj.length
    X = covariates(traj, scaler)
    return np.hstack([np.ones((T, 1)), _cumulative_counts(traj),
                      X, _prev_covariates(X),
                      np.tile(traj.subgroup_onehot(), (T, 1))])


@dataclass
class PropensityModels:
    """Fitted logistic weights for the four propensity regressions."""

    w_num: dict    # process name -> weights on numerator features
    w_den: dict    # process name -> weights on denominator features

    @classmethod
    def fit(cls, dataset: list[Trajectory], scaler: FeatureScaler,
            l2: float = 1e-4) -> "PropensityModels":
        Xn = np.vstack([_num_features(t) for t in dataset])
        Xd = np.vstack([_den_features(t, scaler) for t in dataset])
        bits = np.vstack([[label_to_binary(a) for a in t.treatments]
                          for t in dataset]).astype(float)
        w_num, w_den = {}, {}
        for j, k in enumerate(("chemo", "radio")):
            w_num[k] = logistic_fit(Xn, bits[:, j], l2)
            w_den[k] = logistic_fit(Xd, bits[:, j], l2)
        return cls(w_num, w_den)

    def step_factors(self, traj: Trajectory,
                     scaler: FeatureScaler) -> np.ndarray:
        """(T,) per-step stabilized-weight factors num/den for both processes."""
        Xn = _num_features(traj)
        Xd = _den_features(traj, scaler)
        bits = np.array([label_to_binary(a) for a in traj.treatments],
                        dtype=float)
        factors = np.ones(traj.length)
        for j, k in enumerate(("chemo", "radio")):
            pn = logistic_prob(Xn, self.w_num[k])
            pd = logistic_prob(Xd, self.w_den[k])
            a = bits[:, j]
            factors *= (np.where(a == 1, pn, 1 - pn)
                        / np.where(a == 1, pd, 1 - pd))
        return factors


def stabilized_weights(factors: np.ndarray, anchor: int,
                       tau: int) -> float:
    """SW for a plan window: product of per-step factors over the window."""
    return float(np.prod(factors[anchor:anchor + tau]))


def _outcome_features(traj: Trajectory, scaler: FeatureScaler, anchor: int,
                      plan_counts: np.ndarray) -> np.ndarray:
    X = covariates(traj, scaler)
    prev = X[anchor - 1] if anchor > 0 else np.zeros(X.shape[1])
    return np.concatenate([[1.0], plan_counts, X[anchor], prev,
                           traj.subgroup_onehot()])


def _plan_counts(plan: np.ndarray) -> np.ndarray:
    bits = np.array([label_to_binary(a) for a in plan], dtype=float)
    return bits.sum(axis=0)


def _wls(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w).reshape(-1, 1)
    beta, *_ = np.linalg.lstsq(X * sw, y * sw[:, 0], rcond=None)
    return beta


@dataclass
class MsmModel:
    scaler: FeatureScaler
    propensity: PropensityModels | None
    betas: dict = field(default_factory=dict)  # tau -> regression weights
    weighted: bool = True

    @classmethod
    def fit(cls, dataset: list[Trajectory], taus: list[int],
            scaler: FeatureScaler | None = None, l2: float = 1e-4,
            truncate: tuple[float, float] = (1.0, 99.0),
            weighted: bool = True) -> "MsmModel":
        scaler = scaler or FeatureScaler.fit(dataset)
        prop = PropensityModels.fit(dataset, scaler, l2) if weighted else None
        factors = ({t.patient_id: prop.step_factors(t, scaler)
                    for t in dataset} if weighted else None)
        model = cls(scaler, prop, weighted=weighted)
        for tau in taus:
            rows, ys, ws = [], [], []
            for traj in dataset:
                for a in range(traj.length - tau + 1):
                    plan = traj.treatments[a:a + tau]
                    rows.append(_outcome_features(traj, scaler, a,
                                                  _plan_counts(plan)))
                    ys.append(scaler.norm_y(traj.volumes[a + tau]))
                    ws.append(stabilized_weights(factors[traj.patient_id],
                                                 a, tau)
                              if weighted else 1.0)
            X, y, w = np.array(rows), np.array(ys), np.array(ws)
            if weighted:
                lo, hi = np.percentile(w, truncate)
                w = np.clip(w, lo, hi)
            model.betas[tau] = _wls(X, y, w)
        return model

    def predict_branch_sets(self, dataset: list[Trajectory],
                            branch_sets: list[CounterfactualBranchSet]
                            ) -> list[np.ndarray]:
        by_id = {t.patient_id: t for t in dataset}
        out = []
        for bs in branch_sets:
            if bs.tau not in self.betas:
                raise ValueError(f"no outcome model fitted for tau={bs.tau}")
            traj = by_id[bs.patient_id]
            a = bs.t - 1
            X = np.array([_outcome_features(traj, self.scaler, a,
                                            _plan_counts(p))
                          for p in bs.plans])
            out.append(self.scaler.denorm_y(X @ self.betas[bs.tau]))
        return out


    def save(self, path) -> None:
        doc = {"scaler": self.scaler.to_dict(), "weighted": self.weighted,
               "betas": {str(t): b.tolist() for t, b in self.betas.items()}}
        if self.propensity is not None:
            doc["propensity"] = {
                "w_num": {k: w.tolist() for k, w in self.propensity.w_num.items()},
                "w_den": {k: w.tolist() for k, w in self.propensity.w_den.items()},
            }
        with open(path, "w") as f:
            json.dump(doc, f, indent=2)

    @classmethod
    def load(cls, path) -> "MsmModel":
        with open(path) as f:
            doc = json.load(f)
        prop = None
        if "propensity" in doc:
            prop = PropensityModels(
                {k: np.array(w) for k, w in doc["propensity"]["w_num"].items()},
                {k: np.array(w) for k, w in doc["propensity"]["w_den"].items()})
        model = cls(FeatureScaler.from_dict(doc["scaler"]), prop,
                    weighted=doc["weighted"])
        model.betas = {int(t): np.array(b) for t, b in doc["betas"].items()}
        return model


class LinearBaseline(MsmModel):
    """The same pooled regression with all weights equal to one."""

    @classmethod
    def fit(cls, dataset: list[Trajectory], taus: list[int],
            scaler: FeatureScaler | None = None, **kwargs) -> "LinearBaseline":
        model = MsmModel.fit(dataset, taus, scaler, weighted=False)
        return cls(model.scaler, None, model.betas, weighted=False)
