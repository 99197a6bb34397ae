"""PK-PD tumour-growth simulator with controllable time-dependent confounding.

Each simulated patient evolves by the discrete-time volume update

    V(t+1) = (1 + rho*log(K/V(t)) - beta_c*C(t) - (alpha_r*d(t) + beta_r*d(t)^2) + e_t) * V(t)

where C(t) is the chemotherapy drug concentration (exponential decay, half
life of one day) and d(t) the radiotherapy dose.  Treatment assignment is
confounded by the recent tumour diameter: chemo and radio are independent
Bernoullis with probability sigma(gamma/d_max * (mean_diameter - delta)).

Ground-truth counterfactual branches reuse the factual noise sequence of the
anchor window (common random numbers), so branch differences isolate the
treatment terms, and the factual plan reproduces the factual outcome exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

# Treatment labels.
NO_TREATMENT = 0
CHEMO = 1
RADIO = 2
CHEMO_RADIO = 3
N_TREATMENTS = 4

VOLUME_FLOOR = 1e-3  # cm^3; growth model is undefined at V <= 0


def label_to_binary(label: int) -> tuple[int, int]:
    """Categorical treatment label -> (chemo applied, radio applied)."""
    return (1 if label in (CHEMO, CHEMO_RADIO) else 0,
            1 if label in (RADIO, CHEMO_RADIO) else 0)


def binary_to_label(chemo: int, radio: int) -> int:
    return (CHEMO if chemo else 0) + (RADIO if radio else 0)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PriorSpec:
    family: str  # "normal" | "lognormal" | "constant" | "scaled"
    mean: float = 0.0
    std: float = 0.0
    of: str | None = None      # for "scaled": name of the referenced parameter
    factor: float = 1.0


@dataclass
class StageSpec:
    name: str
    probability: float
    diameter_mean_cm: float
    diameter_log_std: float
    diameter_lower_cm: float = 0.3
    diameter_upper_cm: float = 13.0


@dataclass
class PriorConfig:
    parameters: dict[str, PriorSpec]
    stages: list[StageSpec]
    initial_diameter_bounds_cm: tuple[float, float] = (0.3, 12.0)
    description: str = ""

    def __post_init__(self):
        for name, spec in self.parameters.items():
            if spec.std < 0:
                raise ValueError(f"prior std for '{name}' must be >= 0")
        total = sum(s.probability for s in self.stages)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"stage probabilities sum to {total}, expected 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "PriorConfig":
        params = {k: PriorSpec(**v) for k, v in doc["parameters"].items()}
        stages = [StageSpec(**s) for s in doc["stages"]]
        bounds = tuple(doc.get("initial_diameter_bounds_cm", (0.3, 12.0)))
        return cls(parameters=params, stages=stages,
                   initial_diameter_bounds_cm=bounds,
                   description=doc.get("description", ""))

    def to_dict(self) -> dict:
        return {"description": self.description,
                "parameters": {k: {kk: vv for kk, vv in asdict(v).items()
                                   if vv is not None}
                               for k, v in self.parameters.items()},
                "stages": [asdict(s) for s in self.stages],
                "initial_diameter_bounds_cm": list(self.initial_diameter_bounds_cm)}


def load_priors(path=None) -> PriorConfig:
    """Load a prior file; with no path, the repo-shipped default priors."""
    if path is None:
        text = resources.files("cfseq.data").joinpath("default_priors.json").read_text()
    else:
        text = Path(path).read_text()
    return PriorConfig.from_dict(json.loads(text))


@dataclass
class SimConfig:
    gamma_c: float = 0.0
    gamma_r: float = 0.0
    n_patients: int = 1000
    max_timesteps: int = 60
    noise_std: float = 0.01
    d_max: float = 13.0
    delta_c: float | None = None  # default d_max / 2
    delta_r: float | None = None
    diameter_window: int = 15
    chemo_dose: float = 5.0      # mg/m^3
    radio_dose: float = 2.0      # Gy
    seed: int = 0
    priors: PriorConfig | None = None
    priors_path: str | None = None

    def __post_init__(self):
        if self.gamma_c < 0 or self.gamma_r < 0:
            raise ValueError("gamma_c and gamma_r must be >= 0")
        if self.max_timesteps <= 0:
            raise ValueError("max_timesteps must be positive")
        if self.delta_c is None:
            self.delta_c = self.d_max / 2
        if self.delta_r is None:
            self.delta_r = self.d_max / 2
        if self.priors is None:
            self.priors = load_priors(self.priors_path)
        elif isinstance(self.priors, dict):
            self.priors = PriorConfig.from_dict(self.priors)

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        priors = doc.pop("priors", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"invalid SimConfig field(s): {sorted(unknown)}")
        cfg = cls(**doc)
        if priors is not None:
            cfg.priors = PriorConfig.from_dict(priors)
        return cfg

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in self.__dataclass_fields__
               if k not in ("priors", "priors_path")}
        doc["priors"] = self.priors.to_dict()
        return doc


@dataclass
class PatientParams:
    rho: float
    K: float
    beta_c: float
    alpha_r: float
    beta_r: float
    subgroup: int  # 1..3

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError("carrying capacity K must be positive")
        if min(self.beta_c, self.alpha_r, self.beta_r) < 0:
            raise ValueError("sensitivities must be >= 0")


@dataclass
class Trajectory:
    """One simulated patient (0-based arrays).

    ``volumes`` has length T+1: entry t is V(t+1) in 1-based day counting, so
    the outcome after step t is volumes[t + 1].  ``treatments``, ``chemo_conc``
    and ``noise`` have length T.
    """

    patient_id: int
    volumes: np.ndarray
    chemo_conc: np.ndarray
    treatments: np.ndarray
    noise: np.ndarray
    subgroup: int
    params: PatientParams | None = None

    @property
    def length(self) -> int:
        return len(self.treatments)

    def outcomes(self) -> np.ndarray:
        """Y(t+1) = V(t+1) for each treated step."""
        return self.volumes[1:]

    def subgroup_onehot(self) -> np.ndarray:
        v = np.zeros(3)
        v[self.subgroup - 1] = 1.0
        return v


@dataclass
class CounterfactualBranchSet:
    """Alternative treatment plans for one (patient, time, horizon) anchor."""

    patient_id: int
    t: int       # 1-based anchor time; plans occupy steps t .. t+tau-1
    tau: int
    plans: np.ndarray          # (n_plans, tau) categorical labels
    true_outcomes: np.ndarray  # (n_plans,) simulated Y(t+tau) per plan

    def chemo_timing_rows(self) -> np.ndarray:
        return np.arange(0, self.tau)

    def radio_timing_rows(self) -> np.ndarray:
        return np.arange(self.tau, 2 * self.tau)


# ---------------------------------------------------------------------------
# core dynamics


def diameter_from_volume(v):
    """Diameter of a sphere of volume ``v`` (cm^3 -> cm)."""
    return 2.0 * np.cbrt(3.0 * np.asarray(v) / (4.0 * np.pi))


def volume_from_diameter(d):
    return 4.0 / 3.0 * np.pi * (np.asarray(d) / 2.0) ** 3


def update_chemo_concentration(c_prev: float, dose_given: bool,
                               dose: float = 5.0) -> float:
    """One-day exponential decay (half life 1 day) plus any fresh dose."""
    if c_prev < 0:
        raise ValueError("chemo concentration must be >= 0")
    return (dose if dose_given else 0.0) + c_prev / 2.0


def step_volume(v_t: float, c_t: float, d_t: float, params: PatientParams,
                e_t: float) -> float:
    """One day of tumour evolution; result clamped to a small positive floor."""
    if v_t <= 0:
        raise ValueError(f"volume must be positive, got {v_t}")
    growth = params.rho * np.log(params.K / v_t)
    chemo = params.beta_c * c_t
    radio = params.alpha_r * d_t + params.beta_r * d_t * d_t
    v_next = (1.0 + growth - chemo - radio + e_t) * v_t
    return max(v_next, VOLUME_FLOOR)


def treatment_probabilities(mean_diameter: float, config: SimConfig) -> tuple[float, float]:
    """Sigmoid assignment policy given the windowed mean diameter."""
    if mean_diameter < 0:
        raise ValueError("mean diameter must be >= 0")

    def sig(x):
        return 1.0 / (1.0 + np.exp(-x))

    p_c = sig(config.gamma_c / config.d_max * (mean_diameter - config.delta_c))
    p_r = sig(config.gamma_r / config.d_max * (mean_diameter - config.delta_r))
    return float(p_c), float(p_r)


def _sample_prior_value(spec: PriorSpec, mean_override: float | None,
                        rng: np.random.Generator) -> float:
    mean = spec.mean if mean_override is None else mean_override
    if spec.family == "constant":
        return mean
    if spec.family == "normal":
        for _ in range(1000):
            x = rng.normal(mean, spec.std)
            if x >= 0:
                return x
        raise RuntimeError("prior rejection sampling failed; check prior spec")
    if spec.family == "lognormal":
        return float(np.exp(rng.normal(np.log(mean), spec.std)))
    raise ValueError(f"unknown prior family '{spec.family}'")


def sample_patient_params(priors: PriorConfig, rng: np.random.Generator) -> PatientParams:
    """Draw per-patient dynamics parameters.

    Subgroup is uniform over {1,2,3}; subgroup 3 gets a 1.1x chemo-sensitivity
    prior mean, subgroup 1 a 1.1x radio-sensitivity prior mean.  Negative
    sensitivity draws are rejected and resampled.
    """
    subgroup = int(rng.integers(1, 4))
    p = priors.parameters
    beta_c_mean = p["beta_c"].mean * (1.1 if subgroup == 3 else 1.0)
    alpha_r_mean = p["alpha_r"].mean * (1.1 if subgroup == 1 else 1.0)
    rho = _sample_prior_value(p["rho"], None, rng)
    K = _sample_prior_value(p["K"], None, rng)
    beta_c = _sample_prior_value(p["beta_c"], beta_c_mean, rng)
    alpha_r = _sample_prior_value(p["alpha_r"], alpha_r_mean, rng)
    spec_br = p["beta_r"]
    if spec_br.family == "scaled":
        if spec_br.of != "alpha_r":
            raise ValueError("beta_r 'scaled' prior must reference alpha_r")
        beta_r = alpha_r * spec_br.factor
    else:
        beta_r = _sample_prior_value(spec_br, None, rng)
    return PatientParams(rho=rho, K=K, beta_c=beta_c, alpha_r=alpha_r,
                         beta_r=beta_r, subgroup=subgroup)


def _sample_initial_volume(priors: PriorConfig, rng: np.random.Generator) -> float:
    """Stage-conditional initial volume.

    Diameters follow a truncated normal in log space: centred at the log of
    the stage mean diameter, with the (wide) stage std, truncated to the
    stage bounds intersected with the global bounds.  The wide stds give a
    heavy right tail, so late-stage patients often present near-maximal.
    """
    probs = np.array([s.probability for s in priors.stages])
    stage = priors.stages[rng.choice(len(probs), p=probs / probs.sum())]
    glo, ghi = priors.initial_diameter_bounds_cm
    lo = np.log(max(stage.diameter_lower_cm, glo))
    hi = np.log(min(stage.diameter_upper_cm, ghi))
    mu, sd = np.log(stage.diameter_mean_cm), stage.diameter_log_std
    x = truncnorm.rvs((lo - mu) / sd, (hi - mu) / sd, loc=mu, scale=sd,
                      random_state=rng)
    return float(volume_from_diameter(np.exp(x)))


def patient_rng(seed: int, patient_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, patient id); parallel-safe."""
    return np.random.Generator(np.random.Philox(key=[seed, patient_id]))


def simulate_patient(config: SimConfig, patient_id: int) -> Trajectory:
    rng = patient_rng(config.seed, patient_id)
    params = sample_patient_params(config.priors, rng)
    v0 = _sample_initial_volume(config.priors, rng)

    volumes = [v0]
    treatments, concs, noises = [], [], []
    c_prev = 0.0
    window = config.diameter_window
    for t in range(config.max_timesteps):
        diam = diameter_from_volume(np.array(volumes[max(0, t - window + 1): t + 1]))
        mean_d = float(np.mean(diam))
        if diameter_from_volume(volumes[t]) >= config.d_max:
            break  # death
        p_c, p_r = treatment_probabilities(mean_d, config)
        chemo = int(rng.random() < p_c)
        radio = int(rng.random() < p_r)
        e_t = rng.normal(0.0, config.noise_std)
        c_t = update_chemo_concentration(c_prev, bool(chemo), config.chemo_dose)
        d_t = config.radio_dose if radio else 0.0
        v_next = step_volume(volumes[t], c_t, d_t, params, e_t)
        treatments.append(binary_to_label(chemo, radio))
        concs.append(c_t)
        noises.append(e_t)
        volumes.append(v_next)
        c_prev = c_t
    return Trajectory(patient_id=patient_id,
                      volumes=np.array(volumes),
                      chemo_conc=np.array(concs),
                      treatments=np.array(treatments, dtype=np.int64),
                      noise=np.array(noises),
                      subgroup=params.subgroup,
                      params=params)


def simulate_dataset(config: SimConfig, first_patient_id: int = 0) -> list[Trajectory]:
    """Simulate ``n_patients`` independent trajectories.

    Patients with zero treated steps (dead at diagnosis) are excluded by the
    initial-diameter bounds, so every trajectory has length >= 1.
    """
    return [simulate_patient(config, first_patient_id + i)
            for i in range(config.n_patients)]


# ---------------------------------------------------------------------------
# counterfactual ground truth


def timing_plans(tau: int) -> np.ndarray:
    """The 2*tau single-intervention plans: chemo at one step, then radio."""
    plans = np.zeros((2 * tau, tau), dtype=np.int64)
    for s in range(tau):
        plans[s, s] = CHEMO
        plans[tau + s, s] = RADIO
    return plans


def rollout_plan(traj: Trajectory, t: int, plan: np.ndarray,
                 config: SimConfig) -> np.ndarray:
    """Simulate one treatment plan from anchor time ``t`` under factual noise.

    Returns the volume path V(t+1) .. V(t+tau) for the plan.
    """
    a = t - 1  # 0-based index of the first planned step
    tau = len(plan)
    if a < 0 or a + tau > traj.length:
        raise ValueError(f"anchor t={t}, tau={tau} exceeds trajectory length "
                         f"{traj.length}")
    v = traj.volumes[a]
    c_prev = traj.chemo_conc[a - 1] if a > 0 else 0.0
    path = np.empty(tau)
    for s, label in enumerate(plan):
        chemo, radio = label_to_binary(int(label))
        c = update_chemo_concentration(c_prev, bool(chemo), config.chemo_dose)
        d = config.radio_dose if radio else 0.0
        v = step_volume(v, c, d, traj.params, traj.noise[a + s])
        path[s] = v
        c_prev = c
    return path


def generate_counterfactuals(traj: Trajectory, t: int, tau: int,
                             config: SimConfig) -> CounterfactualBranchSet:
    """Ground-truth branch set for one anchor.

    For tau = 1 the plans are the four single treatments; for tau > 1 the
    2*tau single-intervention timing plans.  All branches share the factual
    noise of the window (common random numbers).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if tau == 1:
        plans = np.arange(N_TREATMENTS, dtype=np.int64).reshape(-1, 1)
    else:
        plans = timing_plans(tau)
    outcomes = np.array([rollout_plan(traj, t, plan, config)[-1] for plan in plans])
    return CounterfactualBranchSet(patient_id=traj.patient_id, t=t, tau=tau,
                                   plans=plans, true_outcomes=outcomes)


def branch_sets_for_dataset(dataset: list[Trajectory], tau: int,
                            config: SimConfig) -> list[CounterfactualBranchSet]:
    """Branch sets at every admissible anchor time of every patient."""
    out = []
    for traj in dataset:
        for t in range(1, traj.length - tau + 2):
            out.append(generate_counterfactuals(traj, t, tau, config))
    return out


# ---------------------------------------------------------------------------
# persistence


def dataset_to_csv(dataset: list[Trajectory], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["patient_id", "t", "volume", "chemo_conc", "treatment",
                    "outcome", "subgroup", "noise"])
        for traj in dataset:
            for t in range(traj.length):
                w.writerow([traj.patient_id, t + 1,
                            repr(float(traj.volumes[t])), repr(float(traj.chemo_conc[t])),
                            int(traj.treatments[t]), repr(float(traj.volumes[t + 1])),
                            traj.subgroup, repr(float(traj.noise[t]))])


def dataset_from_csv(path) -> list[Trajectory]:
    rows_by_patient: dict[int, list] = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            rows_by_patient.setdefault(int(row["patient_id"]), []).append(row)
    dataset = []
    for pid, rows in sorted(rows_by_patient.items()):
        rows.sort(key=lambda r: int(r["t"]))
        volumes = [float(rows[0]["volume"])] + [float(r["outcome"]) for r in rows]
        dataset.append(Trajectory(
            patient_id=pid,
            volumes=np.array(volumes),
            chemo_conc=np.array([float(r["chemo_conc"]) for r in rows]),
            treatments=np.array([int(r["treatment"]) for r in rows], dtype=np.int64),
            noise=np.array([float(r["noise"]) for r in rows]),
            subgroup=int(rows[0]["subgroup"])))
    return dataset


def branch_sets_to_csv(branch_sets: list[CounterfactualBranchSet], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["patient_id", "t", "tau", "plan_index", "plan", "true_outcome"])
        for bs in branch_sets:
            for i, plan in enumerate(bs.plans):
                w.writerow([bs.patient_id, bs.t, bs.tau, i,
                            "".join(str(int(x)) for x in plan),
                            repr(float(bs.true_outcomes[i]))])


def branch_sets_from_csv(path) -> list[CounterfactualBranchSet]:
    grouped: dict[tuple, list] = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            key = (int(row["patient_id"]), int(row["t"]), int(row["tau"]))
            grouped.setdefault(key, []).append(row)
    out = []
    for (pid, t, tau), rows in grouped.items():
        rows.sort(key=lambda r: int(r["plan_index"]))
        plans = np.array([[int(ch) for ch in r["plan"]] for r in rows], dtype=np.int64)
        outcomes = np.array([float(r["true_outcome"]) for r in rows])
        out.append(CounterfactualBranchSet(patient_id=pid, t=t, tau=tau,
                                           plans=plans, true_outcomes=outcomes))
    return out
