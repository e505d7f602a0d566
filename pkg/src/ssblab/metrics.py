"""Ranking and calibration metrics, IR-group breakdowns, and report files.

All functions are pure over immutable scored sets.  Reports serialize to a
schema-versioned JSON document; the comparison renderer emits a delimited
table plus a human-readable text table, leaving figure rendering to the
CLI layer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .marketplace import ir_group_partition

__all__ = ["ScoredSet", "GroupMetrics", "MetricsReport", "Comparison",
           "auc", "ece", "adversary_auc", "group_report", "render_report"]

REPORT_SCHEMA = "ssblab-report-v1"
CURVE_COLUMNS = ("epoch", "l_c", "l_a", "l_d", "adversary_auc", "probe_xcorr")


@dataclass(frozen=True)
class ScoredSet:
    """Parallel prediction/label/ad-id arrays for one evaluation slice."""
    y_hat: np.ndarray
    y: np.ndarray
    ad_id: np.ndarray

    def __post_init__(self):
        if not (len(self.y_hat) == len(self.y) == len(self.ad_id)):
            raise ValueError("scored-set arrays must have equal length")
        if self.y_hat.size and (self.y_hat.min() < 0.0 or self.y_hat.max() > 1.0):
            raise ValueError("predictions must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.y)


def auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Probability a random positive outranks a random negative, ties at
    half credit; rank-sum computation.  None when only one class present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = sstats.rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ece(y_hat: np.ndarray, y: np.ndarray, n_buckets: int = 100) -> float:
    """Mean absolute signed residual over equal-width prediction buckets;
    a prediction of exactly 1.0 falls in the last bucket."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.size == 0:
        return 0.0
    if y_hat.min() < 0.0 or y_hat.max() > 1.0:
        raise ValueError("predictions must lie in [0, 1]")
    bucket = np.minimum((y_hat * n_buckets).astype(np.int64), n_buckets - 1)
    residual = np.bincount(bucket, weights=y - y_hat, minlength=n_buckets)
    return float(np.abs(residual).sum() / y_hat.size)


def adversary_auc(scores: np.ndarray, source: np.ndarray) -> float | None:
    """AUC of discriminator scores against the source flag (1 = ad)."""
    return auc(scores, np.asarray(source).astype(np.int64))


@dataclass
class GroupMetrics:
    index: int
    label: str
    n_ads: int
    n_samples: int
    auc: float | None
    ece: float | None


def group_report(scored: ScoredSet, ir: dict[int, float],
                 scheme: str | int = "quartiles") -> list[GroupMetrics]:
    """Per-IR-group metrics.  `scheme` is 'quartiles' (tagging G_top and
    G_bottom) or an integer group count.  Every ad in the set must have an
    IR entry; groups with no samples are omitted, single-class groups
    report an absent AUC."""
    missing = set(np.unique(scored.ad_id).tolist()) - set(ir)
    if missing:
        raise KeyError(f"ads without an IR entry: {sorted(missing)[:5]} ...")
    n_groups = 4 if scheme == "quartiles" else int(scheme)
    groups = ir_group_partition(ir, n_groups)
    out = []
    for gi, ads in enumerate(groups):
        mask = np.isin(scored.ad_id, np.asarray(ads))
        if not mask.any():
            continue
        if scheme == "quartiles":
            label = "G_top" if gi == 0 else ("G_bottom" if gi == n_groups - 1 else f"G_{gi}")
        else:
            label = f"G_{gi}"
        yh, yy = scored.y_hat[mask], scored.y[mask]
        out.append(GroupMetrics(gi, label, len(ads), int(mask.sum()),
                                auc(yh, yy), ece(yh, yy)))
    return out


@dataclass
class MetricsReport:
    """Everything one evaluated run produces, serializable to JSON."""
    variant: str
    seed: int
    auc: float | None
    ece: float
    n_samples: int
    groups: list[GroupMetrics] = field(default_factory=list)
    curves: list[dict] = field(default_factory=list)      # rows keyed by CURVE_COLUMNS
    dataset_digest: str = ""
    config_digest: str = ""
    meta: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def to_json(self) -> str:
        doc = asdict(self)
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema in {path}")
        doc["groups"] = [GroupMetrics(**g) for g in doc["groups"]]
        return cls(**doc)


@dataclass
class VariantSummary:
    variant: str
    seeds: list[int]
    auc_mean: float
    auc_std: float
    auc_impv: float | None
    auc_p_value: float | None
    ece_mean: float
    ece_std: float
    ece_impv: float | None
    groups: dict[str, dict]


@dataclass
class Comparison:
    baseline: str
    variants: list[VariantSummary]
    dataset_digest: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def _group_series(reports: list[MetricsReport], label: str, attr: str) -> list[float]:
    vals = []
    for r in reports:
        for g in r.groups:
            if g.label == label and getattr(g, attr) is not None:
                vals.append(getattr(g, attr))
    return vals


def render_report(reports: list[MetricsReport], baseline: str = "base"
                  ) -> tuple[Comparison, str, str]:
    """Aggregate per-variant metrics over seeds and compare to a baseline.

    Returns (comparison, tsv_text, ascii_table).  Improvement columns are
    against `baseline`; requesting them without a baseline report raises.
    A paired t-test on per-seed AUC is attached where both the variant and
    the baseline cover the same >= 2 seeds.
    """
    if not reports:
        raise ValueError("no reports to render")
    digests = {r.dataset_digest for r in reports}
    if len(digests) > 1:
        raise ValueError("reports disagree on dataset identity; refusing to compare")
    by_variant: dict[str, list[MetricsReport]] = {}
    for r in reports:
        by_variant.setdefault(r.variant, []).append(r)
    variants = sorted(by_variant)
    if baseline not in by_variant and len(variants) > 1:
        raise ValueError(f"baseline variant {baseline!r} missing; "
                         "improvement columns need it")
    base_reports = by_variant.get(baseline, by_variant[variants[0]])
    base_by_seed = {r.seed: r for r in base_reports}
    base_auc = float(np.mean([r.auc for r in base_reports if r.auc is not None]))
    base_ece = float(np.mean([r.ece for r in base_reports]))

    summaries = []
    for name in variants:
        runs = sorted(by_variant[name], key=lambda r: r.seed)
        aucs = [r.auc for r in runs if r.auc is not None]
        eces = [r.ece for r in runs]
        p_value = None
        common = [r.seed for r in runs if r.seed in base_by_seed]
        if name != baseline and len(common) >= 2:
            a = [r.auc for r in runs if r.seed in base_by_seed]
            b = [base_by_seed[r.seed].auc for r in runs if r.seed in base_by_seed]
            if len(set(np.round(np.array(a) - np.array(b), 15))) > 1:
                p_value = float(sstats.ttest_rel(a, b).pvalue)
            else:
                p_value = 1.0 if np.allclose(a, b) else 0.0
        group_stats: dict[str, dict] = {}
        for label in {g.label for r in runs for g in r.groups}:
            vals = _group_series(runs, label, "auc")
            base_vals = _group_series(base_reports, label, "auc")
            evals = _group_series(runs, label, "ece")
            group_stats[label] = {
                "auc_mean": float(np.mean(vals)) if vals else None,
                "auc_impv": (float(np.mean(vals) - np.mean(base_vals))
                             if vals and base_vals else None),
                "ece_mean": float(np.mean(evals)) if evals else None,
            }
        summaries.append(VariantSummary(
            variant=name, seeds=[r.seed for r in runs],
            auc_mean=float(np.mean(aucs)) if aucs else float("nan"),
            auc_std=float(np.std(aucs)) if aucs else float("nan"),
            auc_impv=(float(np.mean(aucs) - base_auc) if aucs else None),
            auc_p_value=p_value,
            ece_mean=float(np.mean(eces)), ece_std=float(np.std(eces)),
            ece_impv=float(base_ece - np.mean(eces)),
            groups=group_stats))

    comparison = Comparison(baseline=baseline, variants=summaries,
                            dataset_digest=next(iter(digests)))
    return comparison, _comparison_tsv(comparison), _comparison_table(comparison)


def _fmt(x, digits=4) -> str:
    if x is None:
        return "-"
    return f"{x:+.{digits}f}" if isinstance(x, float) and digits == 4 else f"{x:.{digits}f}"


def _comparison_tsv(c: Comparison) -> str:
    lines = ["variant\tscope\tseeds\tauc_mean\tauc_std\tauc_impv\tauc_p\tece_mean\tece_std\tece_impv"]
    for v in c.variants:
        lines.append("\t".join([
            v.variant, "overall", str(len(v.seeds)),
            f"{v.auc_mean:.6f}", f"{v.auc_std:.6f}",
            "-" if v.auc_impv is None else f"{v.auc_impv:+.6f}",
            "-" if v.auc_p_value is None else f"{v.auc_p_value:.4g}",
            f"{v.ece_mean:.6f}", f"{v.ece_std:.6f}",
            "-" if v.ece_impv is None else f"{v.ece_impv:+.6f}"]))
        for label in sorted(v.groups):
            g = v.groups[label]
            lines.append("\t".join([
                v.variant, label, str(len(v.seeds)),
                "-" if g["auc_mean"] is None else f"{g['auc_mean']:.6f}", "-",
                "-" if g["auc_impv"] is None else f"{g['auc_impv']:+.6f}", "-",
                "-" if g["ece_mean"] is None else f"{g['ece_mean']:.6f}", "-", "-"]))
    return "\n".join(lines) + "\n"


def _comparison_table(c: Comparison) -> str:
    header = f"{'variant':<16}{'AUC':>9}{'Impv.':>9}{'p':>9}{'ECE':>9}{'Impv.':>9}"
    rule = "-" * len(header)
    lines = [header, rule]
    for v in c.variants:
        lines.append(f"{v.variant:<16}{v.auc_mean:>9.4f}"
                     f"{('-' if v.auc_impv is None else format(v.auc_impv, '+.4f')):>9}"
                     f"{('-' if v.auc_p_value is None else format(v.auc_p_value, '.3f')):>9}"
                     f"{v.ece_mean:>9.4f}"
                     f"{('-' if v.ece_impv is None else format(v.ece_impv, '+.4f')):>9}")
        for label in sorted(v.groups):
            g = v.groups[label]
            auc_s = "-" if g["auc_mean"] is None else f"{g['auc_mean']:.4f}"
            impv_s = "-" if g["auc_impv"] is None else f"{g['auc_impv']:+.4f}"
            ece_s = "-" if g["ece_mean"] is None else f"{g['ece_mean']:.4f}"
            lines.append(f"  {label:<14}{auc_s:>9}{impv_s:>9}{'':>9}{ece_s:>9}{'':>9}")
    return "\n".join(lines)
