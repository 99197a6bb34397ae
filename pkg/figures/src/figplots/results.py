"""Loading and validating the consolidated sweep results CSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

REQUIRED_COLUMNS = ("gamma_c", "gamma_r", "model", "tau", "metric", "value")


@dataclass
class ResultsTable:
    """Seed-aggregated results keyed (gamma_c, gamma_r, model, tau, metric).

    The sweep CSV carries one row per seed; loading takes the median over
    seeds.  Error-tagged rows (failed sweep cells) are kept separately.
    """

    rows: list[dict]
    errors: list[dict]

    @classmethod
    def from_csv(cls, path) -> "ResultsTable":
        with open(path) as f:
            raw = list(csv.DictReader(f))
        if not raw:
            raise ValueError(f"no result rows in {path}")
        missing = [c for c in REQUIRED_COLUMNS if c not in raw[0]]
        if missing:
            raise ValueError(f"results CSV missing columns: {missing}")
        grouped: dict[tuple, list[float]] = {}
        errors = []
        for r in raw:
            if r["metric"] == "error":
                errors.append(r)
                continue
            key = (float(r["gamma_c"]), float(r["gamma_r"]), r["model"],
                   int(r["tau"]), r["metric"])
            grouped.setdefault(key, []).append(float(r["value"]))
        rows = [{"gamma_c": k[0], "gamma_r": k[1], "model": k[2],
                 "tau": k[3], "metric": k[4],
                 "value": float(np.median(v))}
                for k, v in grouped.items()]
        return cls(rows, errors)

    def __post_init__(self):
        keys = [(r["gamma_c"], r["gamma_r"], r["model"], r["tau"],
                 r["metric"]) for r in self.rows]
        if len(keys) != len(set(keys)):
            raise ValueError("duplicate (gamma_c, gamma_r, model, tau, "
                             "metric) keys")

    def value(self, gamma_c: float, gamma_r: float, model: str, tau: int,
              metric: str) -> float | None:
        for r in self.rows:
            if (r["gamma_c"], r["gamma_r"], r["model"], r["tau"],
                    r["metric"]) == (gamma_c, gamma_r, model, tau, metric):
                return r["value"]
        return None

    def models(self) -> list[str]:
        return sorted({r["model"] for r in self.rows})

    def symmetric_gammas(self) -> list[float]:
        return sorted({r["gamma_c"] for r in self.rows
                       if r["gamma_c"] == r["gamma_r"]})

    def gamma_settings(self) -> list[tuple[float, float]]:
        return sorted({(r["gamma_c"], r["gamma_r"]) for r in self.rows})

    def taus(self, metric: str | None = None) -> list[int]:
        return sorted({r["tau"] for r in self.rows
                       if metric is None or r["metric"] == metric})
