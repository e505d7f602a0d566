"""Training variants: the shared loop plus the debiasing strategies.

Every variant runs the same network code, optimizer, and initialization;
they differ only in which dataset they consume, which ablation switches
are set, and how per-sample loss weights are derived:

* ``base``     -- ad impressions only, all switches off.
* ``merge``    -- naive merge of ad and pseudo-rec samples through one
                  shared path (single head, shared normalization).
* ``ips``      -- ``base`` with inverse-propensity sample weights.
* ``ips_cap``  -- ``ips`` with max-capped weights.
* ``full``     -- merged data, source normalization, adversarial alignment,
                  and decorrelation all on.

Ablations of ``full`` are expressed through explicit switch overrides.
Training is deterministic per (dataset, config, seed); distinct variants
or seeds may train in parallel processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .marketplace import ImpressionLog
from .metrics import adversary_auc
from .model import CTRModel, DatasetTensors, ModelConfig
from .optim import adam_step
from .tape import Tape

__all__ = ["VariantSpec", "TrainSettings", "TrainResult",
           "VARIANTS", "variant_model_config",
           "propensity_estimate", "ips_weight", "sample_weights", "train_variant"]

VARIANTS = ("base", "merge", "ips", "ips_cap", "full")


@dataclass(frozen=True)
class VariantSpec:
    kind: str
    propensity_source: str = "ir_estimate"   # or "simulator_truth"
    cap: float | None = None                 # ips_cap only

    def __post_init__(self):
        if self.kind not in VARIANTS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {VARIANTS}")
        if (self.cap is not None) != (self.kind == "ips_cap"):
            raise ValueError("cap must be given exactly when kind='ips_cap'")
        if self.propensity_source not in ("simulator_truth", "ir_estimate"):
            raise ValueError(f"unknown propensity source {self.propensity_source!r}")

    @property
    def uses_merged_data(self) -> bool:
        return self.kind in ("merge", "full")

    @property
    def uses_weights(self) -> bool:
        return self.kind in ("ips", "ips_cap")


def variant_model_config(base_cfg: ModelConfig, kind: str,
                         switch_overrides: dict | None = None) -> ModelConfig:
    """Switch settings for each variant; overrides drive the ablations."""
    if kind == "full":
        cfg = replace(base_cfg, use_source_bn=True, use_alignment=True,
                      use_decorrelation=True, source_aware_heads=True)
    elif kind == "merge":
        cfg = replace(base_cfg, use_source_bn=False, use_alignment=False,
                      use_decorrelation=False, source_aware_heads=False)
    else:   # base, ips, ips_cap
        cfg = replace(base_cfg, use_source_bn=False, use_alignment=False,
                      use_decorrelation=False, source_aware_heads=True)
    if switch_overrides:
        cfg = replace(cfg, **switch_overrides)
    return cfg


# --------------------------------------------------------------------------
# inverse propensity machinery
# --------------------------------------------------------------------------

def propensity_estimate(ad_log: ImpressionLog, source: str) -> dict[int, float]:
    """Per-ad display propensity.

    ``simulator_truth`` uses the log's exact bookkeeping: the uniform policy
    displays each candidate with probability slots/candidate_size; ranked
    policies are deterministic given the candidate draw, so the realized
    displays/candidacies rate is the propensity itself (ads displayed zero
    times never occur as training samples and are omitted).
    ``ir_estimate`` is the additively smoothed rate (displays+0.5) /
    (candidacies+1), always in (0, 1).
    """
    if source not in ("simulator_truth", "ir_estimate"):
        raise ValueError(f"unknown propensity source {source!r}")
    candidacies: dict[int, int] = {}
    for cand in ad_log.candidate_sets.values():
        for a in cand.tolist():
            candidacies[a] = candidacies.get(a, 0) + 1
    displays: dict[int, int] = {}
    for rec in ad_log.records:
        displays[rec.subject_id] = displays.get(rec.subject_id, 0) + 1
    out: dict[int, float] = {}
    for a, n_cand in sorted(candidacies.items()):
        n_disp = displays.get(a, 0)
        if source == "simulator_truth":
            if ad_log.policy == "uniform":
                out[a] = ad_log.slots / ad_log.candidate_size
            elif n_disp > 0:
                out[a] = n_disp / n_cand
        else:
            out[a] = (n_disp + 0.5) / (n_cand + 1.0)
    return out


def ips_weight(propensity: float, cap: float | None = None) -> float:
    if propensity <= 0.0 or propensity > 1.0:
        raise ValueError(f"propensity must lie in (0, 1], got {propensity}")
    w = 1.0 / propensity
    if cap is not None:
        w = min(w, cap)
    return w


def sample_weights(spec: VariantSpec, ad_ids: np.ndarray,
                   propensities: dict[int, float]) -> np.ndarray:
    if not spec.uses_weights:
        return np.ones(len(ad_ids))
    return np.array([ips_weight(propensities[int(a)], spec.cap) for a in ad_ids])


# --------------------------------------------------------------------------
# the shared training loop
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 512
    epochs: int = 3
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    curve_points_per_epoch: int = 8
    holdout_fraction: float = 0.05
    probe_size: int = 1024

    def validate(self) -> list[str]:
        errs = []
        if self.batch_size < 4:
            errs.append("batch_size must be >= 4")
        if self.epochs < 1:
            errs.append("epochs must be >= 1")
        if self.learning_rate <= 0:
            errs.append("learning_rate must be positive")
        if not (0.0 <= self.holdout_fraction < 0.5):
            errs.append("holdout_fraction must lie in [0, 0.5)")
        return errs


@dataclass
class TrainResult:
    model: CTRModel
    curves: list[dict] = field(default_factory=list)
    term_totals: dict = field(default_factory=dict)


def _mean_xcorr(model: CTRModel, data: DatasetTensors, idx: np.ndarray) -> float:
    """Mean squared cross-correlation between the two representation
    branches, averaged over the per-source dimension pairs on a probe."""
    inv, con = model.representations(data.slice(idx))
    src = data.source[idx]
    vals = []
    for mask in (src > 0.5, src < 0.5):
        if mask.sum() < 2:
            continue
        p = inv[mask] - inv[mask].mean(axis=0)
        q = con[mask] - con[mask].mean(axis=0)
        cov = p.T @ q
        denom = np.sqrt(np.outer((p * p).sum(axis=0) + 1e-8,
                                 (q * q).sum(axis=0) + 1e-8))
        vals.append(float(np.mean((cov / denom) ** 2)))
    return float(np.mean(vals)) if vals else float("nan")


def _curve_row(model: CTRModel, data: DatasetTensors, holdout: np.ndarray,
               probe: np.ndarray, epoch: float, window: dict) -> dict:
    row = {"epoch": round(epoch, 6),
           "l_c": window.get("l_c", float("nan")),
           "l_a": window.get("l_a", float("nan")),
           "l_d": window.get("l_d", float("nan"))}
    if model.cfg.use_alignment and holdout.size:
        scores = model.adversary_scores(data.slice(holdout))
        a = adversary_auc(scores, data.source[holdout])
        row["adversary_auc"] = float("nan") if a is None else a
    else:
        row["adversary_auc"] = float("nan")
    row["probe_xcorr"] = _mean_xcorr(model, data, probe)
    return row


def train_variant(spec: VariantSpec, data: DatasetTensors, model_cfg: ModelConfig,
                  settings: TrainSettings, seed: int) -> TrainResult:
    """Train one variant on prepared dataset tensors.

    Consumes the dataset in its stored (pre-shuffled) order.  Each epoch
    holds out a freshly drawn slice for the adversary-AUC diagnostic and
    trains on the remainder; loss-term curves are logged at a fixed number
    of points per epoch.  Bit-reproducible for fixed inputs and seed.
    """
    errs = settings.validate()
    if errs:
        raise ValueError("invalid training settings: " + "; ".join(errs))
    n = len(data)
    if n < 2 * settings.batch_size and n < 64:
        raise ValueError(f"dataset too small to train on ({n} samples)")
    # merged-data variants degrade gracefully on a single-source stream
    # (alignment then contributes nothing), but rec rows in an ads-only
    # variant are a wiring mistake.
    if not spec.uses_merged_data and (data.source < 0.5).any():
        raise ValueError(f"variant {spec.kind!r} expects an ads-only dataset")

    model = CTRModel(model_cfg, seed)
    probe_rng = np.random.default_rng([seed, 11])
    probe = np.sort(probe_rng.choice(n, size=min(settings.probe_size, n), replace=False))

    result = TrainResult(model=model)
    totals = {"l_c": 0.0, "l_a": 0.0, "l_d": 0.0, "batches": 0, "sum_weights": 0.0,
              "max_weight": float(np.max(data.weight)) if n else 0.0}
    window = {"l_c": [], "l_a": [], "l_d": []}

    first_holdout = _epoch_holdout(seed, 0, n, settings)
    result.curves.append(_curve_row(model, data, first_holdout, probe, 0.0, {}))

    for epoch in range(settings.epochs):
        holdout = _epoch_holdout(seed, epoch, n, settings)
        train_idx = np.setdiff1d(np.arange(n), holdout)
        batches = [train_idx[lo:lo + settings.batch_size]
                   for lo in range(0, train_idx.size, settings.batch_size)]
        # a trailing batch too small to batch-normalize (single row of one
        # source) folds into its predecessor
        if len(batches) > 1 and _degenerate_for_bn(data, batches[-1]):
            batches[-2] = np.concatenate([batches[-2], batches[-1]])
            batches.pop()
        mark = max(1, len(batches) // settings.curve_points_per_epoch)
        for bi, idx in enumerate(batches):
            batch = data.slice(idx)
            tape = Tape()
            fwd = model.forward(tape, batch, mode="train")
            loss, terms = model.loss(tape, batch, fwd)
            tape.backward(loss)
            adam_step(model.store, settings.learning_rate, settings.adam_beta1,
                      settings.adam_beta2, settings.adam_eps)
            for k in ("l_c", "l_a", "l_d"):
                window[k].append(terms[k] / idx.size)
                totals[k] += terms[k]
            totals["batches"] += 1
            totals["sum_weights"] += float(batch.weight.sum())
            if (bi + 1) % mark == 0 or bi == len(batches) - 1:
                means = {k: float(np.mean(v)) for k, v in window.items() if v}
                frac = epoch + (bi + 1) / len(batches)
                result.curves.append(
                    _curve_row(model, data, holdout, probe, frac, means))
                window = {"l_c": [], "l_a": [], "l_d": []}
    result.term_totals = totals
    return result


def _degenerate_for_bn(data: DatasetTensors, idx: np.ndarray) -> bool:
    if idx.size < 4:
        return True
    n_ad = int((data.source[idx] > 0.5).sum())
    return n_ad == 1 or idx.size - n_ad == 1


def _epoch_holdout(seed: int, epoch: int, n: int, settings: TrainSettings) -> np.ndarray:
    size = int(settings.holdout_fraction * n)
    if size == 0:
        return np.array([], dtype=np.int64)
    rng = np.random.default_rng([seed, 13, epoch])
    return np.sort(rng.choice(n, size=size, replace=False))
