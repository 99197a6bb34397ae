"""Evaluation: counterfactual accuracy, plan selection, and balancing checks.

Errors are reported as RMSE normalized by the maximum tumour volume (1150
cm^3), in percent.  Plan selection distinguishes choosing the right
treatment arm from choosing the right application time within the arm; ties
within a small tolerance of the best outcome all count as correct.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .features import (FeatureScaler, prev_concentration,
                       prev_treatment_onehot)
from .nn import V_MAX, softmax_probs
from .simulator import CounterfactualBranchSet, Trajectory

TIE_EPSILON = 0.001


class OracleModel:
    """Returns the simulated ground truth; used as a harness self-test."""

    def predict_branch_sets(self, dataset, branch_sets):
        return [bs.true_outcomes.copy() for bs in branch_sets]


def normalized_rmse(preds: np.ndarray, trues: np.ndarray) -> float:
    """100 * RMSE / V_max over paired predictions."""
    e = np.asarray(preds) - np.asarray(trues)
    return 100.0 * float(np.sqrt(np.mean(e ** 2))) / V_MAX


def evaluate_branch_sets(model, dataset: list[Trajectory],
                         branch_sets: list[CounterfactualBranchSet]) -> dict:
    """Pooled counterfactual RMSE plus selection accuracy for one horizon."""
    preds = model.predict_branch_sets(dataset, branch_sets)
    flat_p = np.concatenate(preds)
    flat_t = np.concatenate([bs.true_outcomes for bs in branch_sets])
    out = {"rmse": normalized_rmse(flat_p, flat_t),
           "n_branch_sets": len(branch_sets)}
    out.update(selection_accuracy(branch_sets, preds))
    return out


def _arm(plan_index: int, tau: int) -> int:
    return 0 if plan_index < tau else 1  # 0 = chemo, 1 = radio


def optimal_plan_indices(values: np.ndarray,
                         eps: float = TIE_EPSILON) -> np.ndarray:
    """Indices of plans whose outcome is within ``eps`` of the best (lowest).

    ``eps`` is on the normalized outcome scale.
    """
    v = np.asarray(values) / V_MAX
    return np.flatnonzero(v <= v.min() + eps)


def selection_accuracy(branch_sets: list[CounterfactualBranchSet],
                       preds: list[np.ndarray],
                       eps: float = TIE_EPSILON) -> dict:
    """Fraction of anchors where the model picks a best plan.

    For one-step sets the four plans are the treatments themselves, so only
    treatment accuracy is defined.  For timing sets, treatment accuracy asks
    whether the arm of the model's best plan contains a true optimum, and
    timing accuracy whether the exact plan is a true optimum.
    """
    treat_hits, timing_hits = [], []
    for bs, p in zip(branch_sets, preds):
        best_true = optimal_plan_indices(bs.true_outcomes, eps)
        pick = int(np.argmin(p))
        if bs.tau == 1:
            treat_hits.append(pick in best_true)
        else:
            true_arms = {_arm(i, bs.tau) for i in best_true}
            treat_hits.append(_arm(pick, bs.tau) in true_arms)
            timing_hits.append(pick in best_true)
    out = {"treatment_accuracy": float(np.mean(treat_hits))}
    if timing_hits:
        out["timing_accuracy"] = float(np.mean(timing_hits))
    return out


# ---------------------------------------------------------------------------
# balancing diagnostic

RAW_HISTORY_STEPS = 5


def raw_history_features(traj: Trajectory, scaler: FeatureScaler,
                         t: int) -> np.ndarray:
    """Flattened last-5-step raw history, plus the static subgroup.

    Each step contributes [z(volume), z(lagged concentration),
    onehot(previous treatment)].  The concentration is part of the raw
    record even though the learned models never see it: the diagnostic
    asks whether a classifier can recover the treatment from everything
    the simulator wrote down.
    """
    z_vol = scaler.z_vol(traj.volumes[:-1]).reshape(-1, 1)
    z_conc = scaler.z_conc(prev_concentration(traj)).reshape(-1, 1)
    rows = np.hstack([z_vol, z_conc, prev_treatment_onehot(traj)])
    window = rows[max(0, t - RAW_HISTORY_STEPS + 1):t + 1]
    if len(window) < RAW_HISTORY_STEPS:
        window = np.vstack([np.zeros((RAW_HISTORY_STEPS - len(window),
                                      rows.shape[1])), window])
    return np.concatenate([window.reshape(-1), traj.subgroup_onehot()])


def multinomial_logistic_fit(X: np.ndarray, y: np.ndarray, n_classes: int,
                             l2: float = 1e-4) -> np.ndarray:
    """(D, K) softmax-regression weights by penalized maximum likelihood."""
    n, d = X.shape
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0

    def nll(wf):
        W = wf.reshape(d, n_classes)
        Z = X @ W
        Z -= Z.max(axis=1, keepdims=True)
        logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
        return -(Y * logp).sum() + 0.5 * l2 * wf @ wf

    def grad(wf):
        W = wf.reshape(d, n_classes)
        P = softmax_probs(X @ W)
        return (X.T @ (P - Y)).reshape(-1) + l2 * wf

    res = minimize(nll, np.zeros(d * n_classes), jac=grad, method="L-BFGS-B")
    return res.x.reshape(d, n_classes)


def _classifier_accuracy(X_train, y_train, X_test, y_test, n_classes) -> float:
    mu, sd = X_train.mean(axis=0), X_train.std(axis=0) + 1e-12
    Xa = np.hstack([(X_train - mu) / sd, np.ones((len(X_train), 1))])
    Xb = np.hstack([(X_test - mu) / sd, np.ones((len(X_test), 1))])
    W = multinomial_logistic_fit(Xa, y_train, n_classes)
    return float(np.mean((Xb @ W).argmax(axis=1) == y_test))


def balancing_diagnostic(encoder, train: list[Trajectory],
                         test: list[Trajectory], scaler: FeatureScaler,
                         n_classes: int = 4) -> dict:
    """Train fresh treatment classifiers on frozen representations and on raw
    history features; lower representation accuracy means better balancing."""
    phi_tr = encoder.representations(train, scaler)
    phi_te = encoder.representations(test, scaler)

    def rows(dataset, phis):
        Xp, Xr, ys = [], [], []
        for traj in dataset:
            for t in range(traj.length):
                Xp.append(phis[traj.patient_id][t])
                Xr.append(raw_history_features(traj, scaler, t))
                ys.append(traj.treatments[t])
        return np.array(Xp), np.array(Xr), np.array(ys)

    Xp_tr, Xr_tr, y_tr = rows(train, phi_tr)
    Xp_te, Xr_te, y_te = rows(test, phi_te)
    return {
        "phi_accuracy": _classifier_accuracy(Xp_tr, y_tr, Xp_te, y_te,
                                             n_classes),
        "raw_accuracy": _classifier_accuracy(Xr_tr, y_tr, Xr_te, y_te,
                                             n_classes),
        "majority_rate": float(np.bincount(y_te, minlength=n_classes).max()
                               / len(y_te)),
    }


# ---------------------------------------------------------------------------
# optimal-adversary check

def optimal_adversary(densities: np.ndarray) -> np.ndarray:
    """Closed-form best classifier for K class-conditional densities.

    ``densities`` is (K, n) with rows summing to one; returns (n, K) with
    G[x, j] proportional to P_j(x).
    """
    P = np.asarray(densities, dtype=float)
    tot = P.sum(axis=0)
    with np.errstate(invalid="ignore"):
        G = (P / tot).T
    G[tot == 0] = 1.0 / P.shape[0]
    return G


def adversary_objective(densities: np.ndarray, G: np.ndarray) -> float:
    """sum_j sum_x P_j(x) log G[x, j] (the adversary's expected log score)."""
    P = np.asarray(densities, dtype=float)
    with np.errstate(divide="ignore"):
        logG = np.log(G.T)
    val = np.where(P > 0, P * logG, 0.0)
    return float(val.sum())


def numeric_optimal_adversary(densities: np.ndarray,
                              seed: int = 0) -> np.ndarray:
    """The same classifier found by direct numerical optimization."""
    P = np.asarray(densities, dtype=float)
    K, n = P.shape
    rng = np.random.default_rng(seed)

    def neg(obj_flat):
        G = softmax_probs(obj_flat.reshape(n, K))
        return -adversary_objective(P, G)

    res = minimize(neg, rng.normal(scale=0.1, size=n * K), method="L-BFGS-B")
    return softmax_probs(res.x.reshape(n, K))


# ---------------------------------------------------------------------------
# reporting and export


@dataclass
class MetricsReport:
    model: str
    gamma_c: float
    gamma_r: float
    seed: int
    metrics: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"model": self.model, "gamma_c": self.gamma_c,
                "gamma_r": self.gamma_r, "seed": self.seed, **self.metrics}


def write_metrics_json(path, reports: list[MetricsReport]) -> None:
    with open(path, "w") as f:
        json.dump([r.row() for r in reports], f, indent=2)


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    rows = [r.row() for r in reports]
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)


def export_representations(encoder, dataset: list[Trajectory],
                           scaler: FeatureScaler, path) -> None:
    """CSV of per-step balancing representations with treatment labels."""
    reprs = encoder.representations(dataset, scaler)
    width = next(iter(reprs.values())).shape[1]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["patient_id", "t", "treatment", "subgroup"]
                   + [f"phi_{i}" for i in range(width)])
        for traj in dataset:
            phi = reprs[traj.patient_id]
            for t in range(traj.length):
                w.writerow([traj.patient_id, t + 1, traj.treatments[t],
                            traj.subgroup]
                           + [repr(float(v)) for v in phi[t]])
