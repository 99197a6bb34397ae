"""Recurrent marginal structural network.

Same stabilized-weight construction as the linear marginal structural model,
but with LSTM propensity estimators and an LSTM encoder/decoder trained on
the reweighted squared-error loss.  The decoder mirrors the balanced model's
decoder without the adversarial head (its forward is reused with the
reversal strength pinned to zero and only the outcome loss consumed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..features import (ENCODER_INPUT_SIZE, FeatureScaler, history_inputs,
                        pad_batch, prev_treatment_onehot)
from ..nn import (cross_entropy, init_lstm, init_mlp_head, lstm_step,
                  mlp_head, onehot, softmax_probs)
from ..simulator import CounterfactualBranchSet, Trajectory, label_to_binary
from .baselines import RnnBaseline
from .crn import CrnDecoder

_PROCESSES = ("chemo", "radio")


def _numerator_inputs(traj: Trajectory, scaler: FeatureScaler) -> np.ndarray:
    return prev_treatment_onehot(traj)


def treatment_bits(traj: Trajectory) -> np.ndarray:
    return np.array([label_to_binary(a) for a in traj.treatments], dtype=float)


@dataclass
class PropensityRnn:
    """LSTM that models the two binary treatment processes jointly.

    Each process gets a two-class softmax head; the first class is "not
    applied".
    """

    hidden: int
    input_size: int
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, hidden: int, input_size: int,
             rng: np.random.Generator) -> "PropensityRnn":
        model = cls(hidden, input_size)
        init_lstm(model.params, "lstm_", input_size, hidden, rng)
        for k in _PROCESSES:
            init_mlp_head(model.params, f"p{k[0]}_", hidden, hidden, 2, rng)
        return model

    def forward(self, inputs: np.ndarray, bits: np.ndarray,
                mask: np.ndarray) -> dict:
        """inputs (B,T,D), bits (B,T,2), mask (B,T)."""
        B, T, _ = inputs.shape
        h = ad.constant(np.zeros((B, self.hidden)))
        c = ad.constant(np.zeros((B, self.hidden)))
        hs = []
        for t in range(T):
            h, c = lstm_step(self.params, "lstm_", ad.constant(inputs[:, t, :]),
                             h, c, self.hidden)
            hs.append(h)
        h_all = ad.concat(hs, axis=0)
        m_flat = mask.T.reshape(-1)
        msum = float(m_flat.sum())
        loss = None
        probs = np.zeros((B, T, 2))
        for j, k in enumerate(_PROCESSES):
            logits = mlp_head(self.params, f"p{k[0]}_", h_all)
            labels = bits[:, :, j].T.reshape(-1).astype(np.int64)
            ce = ad.scale(cross_entropy(logits, onehot(labels, 2), m_flat),
                          1.0 / msum)
            loss = ce if loss is None else ad.add(loss, ce)
            probs[:, :, j] = softmax_probs(logits.data)[:, 1].reshape(T, B).T
        return {"loss": loss, "probs": probs}


def _factor_from_probs(probs_num: np.ndarray, probs_den: np.ndarray,
                       bits: np.ndarray) -> np.ndarray:
    """Per-step stabilized factors given (T,2) applied-probabilities."""
    pn = np.where(bits == 1, probs_num, 1 - probs_num)
    pd = np.where(bits == 1, probs_den, 1 - probs_den)
    return np.prod(pn / pd, axis=1)


@dataclass
class RmsnModel:
    scaler: FeatureScaler
    prop_num: PropensityRnn
    prop_den: PropensityRnn
    encoder: RnnBaseline
    decoder: CrnDecoder
    meta: dict = field(default_factory=dict)

    def step_factors(self, dataset: list[Trajectory]) -> dict[int, np.ndarray]:
        """Per-patient per-step stabilized-weight factors."""
        num_batch = pad_batch(dataset, self.scaler, _numerator_inputs)
        den_batch = pad_batch(dataset, self.scaler, history_inputs)
        bits_all = np.zeros(num_batch.mask.shape + (2,))
        for i, traj in enumerate(dataset):
            bits_all[i, :traj.length] = treatment_bits(traj)
        pn = self.prop_num.forward(num_batch.inputs, bits_all,
                                   num_batch.mask)["probs"]
        pd = self.prop_den.forward(den_batch.inputs, bits_all,
                                   den_batch.mask)["probs"]
        out = {}
        for i, traj in enumerate(dataset):
            L = traj.length
            out[traj.patient_id] = _factor_from_probs(
                pn[i, :L], pd[i, :L], treatment_bits(traj))
        return out

    def encoder_weights(self, dataset: list[Trajectory],
                        truncate: tuple[float, float] = (1.0, 99.0)
                        ) -> np.ndarray:
        """(B, T_max) cumulative stabilized weights for encoder training."""
        factors = self.step_factors(dataset)
        T = max(t.length for t in dataset)
        w = np.zeros((len(dataset), T))
        for i, traj in enumerate(dataset):
            w[i, :traj.length] = np.cumprod(factors[traj.patient_id])
        valid = w[w > 0]
        lo, hi = np.percentile(valid, truncate)
        w = np.clip(w, lo, hi)
        for i, traj in enumerate(dataset):
            w[i, traj.length:] = 0.0
        return w

    def predict_branch_sets(self, dataset: list[Trajectory],
                            branch_sets: list[CounterfactualBranchSet]
                            ) -> list[np.ndarray]:
        by_id = {t.patient_id: t for t in dataset}
        states: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        groups: dict[int, list[int]] = {}
        for i, bs in enumerate(branch_sets):
            groups.setdefault(bs.tau, []).append(i)
        results: dict[int, np.ndarray] = {}
        H = self.encoder.config.hidden
        for tau, idxs in groups.items():
            rows_h, rows_y0, rows_plan, rows_static, owner = [], [], [], [], []
            for i in idxs:
                bs = branch_sets[i]
                traj = by_id[bs.patient_id]
                if bs.patient_id not in states:
                    states[bs.patient_id] = self.encoder._prefix_states(traj)
                hs, _ = states[bs.patient_id]
                a = bs.t - 1
                h0 = hs[a - 1] if a > 0 else np.zeros(H)
                for p in range(len(bs.plans)):
                    rows_h.append(h0)
                    rows_y0.append(self.scaler.norm_y(traj.volumes[a]))
                    rows_plan.append(bs.plans[p])
                    rows_static.append(traj.subgroup_onehot())
                    owner.append(i)
            preds = self.decoder.predict(np.array(rows_h), np.array(rows_y0),
                                         np.array(rows_plan),
                                         np.array(rows_static))
            final = self.scaler.denorm_y(preds[:, -1])
            owner = np.array(owner)
            for i in idxs:
                results[i] = final[owner == i]
        return [results[i] for i in range(len(branch_sets))]

    def save(self, directory) -> None:
        d = Path(directory)
        meta = {"scaler": self.scaler.to_dict(),
                "encoder_config": self.encoder.config.to_dict(),
                "decoder_config": self.decoder.config.to_dict(),
                "prop_hidden": self.prop_num.hidden, **self.meta}
        ad.save_checkpoint(d / "prop_num.json", self.prop_num.params, meta)
        ad.save_checkpoint(d / "prop_den.json", self.prop_den.params, {})
        self.encoder.save(d / "encoder.json")
        ad.save_checkpoint(d / "decoder.json", self.decoder.params, {})

    @classmethod
    def load(cls, directory) -> "RmsnModel":
        from .baselines import RnnConfig
        from .crn import CrnConfig
        d = Path(directory)
        meta = ad.read_checkpoint_meta(d / "prop_num.json")
        scaler = FeatureScaler.from_dict(meta["scaler"])
        enc_cfg = RnnConfig.from_dict(meta["encoder_config"])
        rng = np.random.default_rng(0)
        prop_num = PropensityRnn.init(meta["prop_hidden"], 4, rng)
        prop_den = PropensityRnn.init(meta["prop_hidden"], ENCODER_INPUT_SIZE,
                                      rng)
        ad.load_checkpoint(d / "prop_num.json", prop_num.params)
        ad.load_checkpoint(d / "prop_den.json", prop_den.params)
        encoder = RnnBaseline.load(d / "encoder.json")
        decoder = CrnDecoder(CrnConfig.from_dict(meta["decoder_config"]), rng)
        ad.load_checkpoint(d / "decoder.json", decoder.params)
        extra = {k: v for k, v in meta.items()
                 if k not in ("scaler", "encoder_config", "decoder_config",
                              "prop_hidden")}
        return cls(scaler, prop_num, prop_den, encoder, decoder, extra)
