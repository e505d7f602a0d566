"""Pipeline orchestration: generate | augment | train | evaluate | ablate | report.

One YAML config file drives every stage; a handful of flags override its
fields.  Every stage writes a manifest of input/output digests so stale
inputs are refused instead of silently consumed, and the whole pipeline is
bit-reproducible for a fixed config and seed.

Exit codes: 0 success, 2 config error, 3 stale inputs, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from . import augment as aug
from . import marketplace as mp
from .figures import (fig_adversary_auc, fig_group_auc, fig_ir_groups,
                      fig_loss_curves, fig_variant_bars)
from .manifest import (RunManifest, StaleInputError, check_inputs, config_digest,
                       file_digest, write_manifest)
from .metrics import (CURVE_COLUMNS, MetricsReport, ScoredSet, group_report,
                      render_report)
from .model import CTRModel, ModelConfig, batch_from_samples
from .optim import load_checkpoint, save_checkpoint
from .tape import GraphNumericsError
from .variants import (TrainSettings, VariantSpec, propensity_estimate,
                       sample_weights, train_variant, variant_model_config)

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "default_config", "main"]

ABLATIONS = {
    "no_source_bn": {"use_source_bn": False},
    "no_alignment": {"use_alignment": False},
    "no_decorrelation": {"use_decorrelation": False},
}
VARIANT_NAMES = ("base", "merge", "ips", "ips_cap", "full") + tuple(ABLATIONS)


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SimSettings:
    ad_sessions: int = 10000
    rec_sessions: int = 6000
    test_sessions: int = 2500
    candidate_size: int = 50
    slots: int = 10
    proxy_noise_sigma: float = 0.6

    def validate(self) -> list[str]:
        errs = []
        for name in ("ad_sessions", "rec_sessions", "test_sessions"):
            if getattr(self, name) <= 0:
                errs.append(f"sim.{name} must be positive")
        if self.slots >= self.candidate_size:
            errs.append("sim.slots must be smaller than sim.candidate_size")
        if self.proxy_noise_sigma < 0:
            errs.append("sim.proxy_noise_sigma must be >= 0")
        return errs


@dataclass(frozen=True)
class AugSettings:
    k_recent: int = 3

    def validate(self) -> list[str]:
        return [] if self.k_recent >= 1 else ["augmentation.k_recent must be >= 1"]


@dataclass(frozen=True)
class ModelSettings:
    embedding_dim: int = 16
    attn_hidden: int = 32
    backbone: tuple[int, ...] = (256, 128)
    proj_hidden: int = 128
    proj_dim: int = 128
    head_hidden: int = 64
    disc_hidden: int = 64
    alpha: float = 0.1
    lambda_align: float = 0.005
    lambda_decor: float = 0.5
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5

    def validate(self) -> list[str]:
        errs = []
        if self.embedding_dim <= 0:
            errs.append("model.embedding_dim must be positive")
        if self.proj_dim <= 0:
            errs.append("model.proj_dim must be positive")
        if self.lambda_align < 0 or self.lambda_decor < 0 or self.alpha < 0:
            errs.append("model loss weights must be >= 0")
        return errs


@dataclass(frozen=True)
class IpsSettings:
    propensity_source: str = "ir_estimate"
    cap: float = 10.0

    def validate(self) -> list[str]:
        errs = []
        if self.propensity_source not in ("ir_estimate", "simulator_truth"):
            errs.append("ips.propensity_source must be ir_estimate or simulator_truth")
        if self.cap <= 0:
            errs.append("ips.cap must be positive")
        return errs


@dataclass(frozen=True)
class EvalSettings:
    group_scheme: str = "quartiles"
    ir_diag_groups: int = 12

    def validate(self) -> list[str]:
        errs = []
        if self.group_scheme != "quartiles":
            try:
                if int(self.group_scheme) < 2:
                    errs.append("evaluation.group_scheme must be 'quartiles' or an int >= 2")
            except (TypeError, ValueError):
                errs.append("evaluation.group_scheme must be 'quartiles' or an int >= 2")
        if self.ir_diag_groups < 2:
            errs.append("evaluation.ir_diag_groups must be >= 2")
        return errs


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs/default"
    seed: int = 0                                  # world/data generation seed
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)       # training seeds
    variants: tuple[str, ...] = ("base", "full")
    catalog: mp.CatalogConfig = field(default_factory=mp.CatalogConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    augmentation: AugSettings = field(default_factory=AugSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    training: TrainSettings = field(default_factory=TrainSettings)
    ips: IpsSettings = field(default_factory=IpsSettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def validate(self) -> list[str]:
        errs = []
        errs += self.catalog.validate()
        errs += self.sim.validate()
        errs += self.augmentation.validate()
        errs += self.model.validate()
        errs += self.training.validate()
        errs += self.ips.validate()
        errs += self.evaluation.validate()
        if not self.seeds:
            errs.append("seeds must be non-empty")
        for v in self.variants:
            if v not in VARIANT_NAMES:
                errs.append(f"unknown variant {v!r}; expected one of {VARIANT_NAMES}")
        if self.sim.candidate_size > self.catalog.n_items:
            errs.append("sim.candidate_size exceeds the item pool")
        return errs

    def dataset_identity(self) -> str:
        return config_digest({"seed": self.seed, "catalog": asdict(self.catalog),
                              "sim": asdict(self.sim),
                              "augmentation": asdict(self.augmentation)})

    def model_config(self, n_ads: int) -> ModelConfig:
        m = self.model
        return ModelConfig.from_catalog(
            self.catalog, n_ads, embedding_dim=m.embedding_dim,
            attn_hidden=m.attn_hidden, backbone=tuple(m.backbone),
            proj_hidden=m.proj_hidden, proj_dim=m.proj_dim,
            head_hidden=m.head_hidden, disc_hidden=m.disc_hidden,
            alpha=m.alpha, lambda_align=m.lambda_align, lambda_decor=m.lambda_decor,
            bn_momentum=m.bn_momentum, bn_eps=m.bn_eps)


def _from_dict(cls, doc: dict, prefix: str, errors: list[str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in doc.items():
        if key not in fields:
            errors.append(f"unknown config key {prefix}{key}")
            continue
        f = fields[key]
        if dataclasses.is_dataclass(f.type) or f.name in (
                "catalog", "sim", "augmentation", "model", "training", "ips", "evaluation"):
            sub_cls = {"catalog": mp.CatalogConfig, "sim": SimSettings,
                       "augmentation": AugSettings, "model": ModelSettings,
                       "training": TrainSettings, "ips": IpsSettings,
                       "evaluation": EvalSettings}[f.name]
            if not isinstance(val, dict):
                errors.append(f"config key {prefix}{key} must be a mapping")
                continue
            kwargs[key] = _from_dict(sub_cls, val, f"{prefix}{key}.", errors)
        elif isinstance(val, list):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"bad config section {prefix or '<root>'}: {exc}")
        return cls()


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    doc = yaml.safe_load(path.read_text()) or {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a mapping")
    errors: list[str] = []
    cfg = _from_dict(ExperimentConfig, doc, "", errors)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg = dataclasses.replace(cfg, **{key: val})
    errors += cfg.validate()
    if errors:
        raise ConfigError("invalid config:\n  - " + "\n  - ".join(errors))
    return cfg


def default_config(**overrides) -> ExperimentConfig:
    return dataclasses.replace(ExperimentConfig(), **overrides)


# --------------------------------------------------------------------------
# stage helpers
# --------------------------------------------------------------------------

def _paths(cfg: ExperimentConfig) -> dict[str, Path]:
    out = Path(cfg.out_dir)
    return {
        "out": out, "data": out / "data", "augment": out / "augment",
        "train": out / "train", "eval": out / "eval", "report": out / "report",
    }


def _digest_outputs(stage_dir: Path, names: list[str]) -> dict[str, str]:
    return {n: file_digest(stage_dir / n) for n in names}


def cmd_generate(cfg: ExperimentConfig) -> Path:
    """Catalog plus three logs: biased ad training log (ecpm), rec log
    (pctr over items), and the uniform ad test log."""
    t0 = time.time()
    paths = _paths(cfg)
    data_dir = paths["data"]
    data_dir.mkdir(parents=True, exist_ok=True)
    catalog = mp.generate_catalog(cfg.catalog, cfg.seed)
    mp.write_catalog(catalog, data_dir / "catalog.json")

    ad_proxy = mp.make_noisy_truth_proxy(catalog, cfg.sim.proxy_noise_sigma,
                                         cfg.seed, "ad")
    rec_proxy = mp.make_noisy_truth_proxy(catalog, cfg.sim.proxy_noise_sigma,
                                          cfg.seed + 1, "rec")
    logs = {
        "ad": mp.run_sessions(catalog, "ecpm", cfg.sim.ad_sessions, cfg.sim.slots,
                              ad_proxy, cfg.seed + 10, source="ad",
                              candidate_size=cfg.sim.candidate_size),
        "rec": mp.run_sessions(catalog, "pctr", cfg.sim.rec_sessions, cfg.sim.slots,
                               rec_proxy, cfg.seed + 20, source="rec",
                               candidate_size=cfg.sim.candidate_size),
        "test": mp.run_sessions(catalog, "uniform", cfg.sim.test_sessions, cfg.sim.slots,
                                None, cfg.seed + 30, source="ad",
                                candidate_size=cfg.sim.candidate_size),
    }
    for name, log in logs.items():
        mp.write_impression_log(log, data_dir / f"{name}_log.tsv",
                                data_dir / f"{name}_candidates.tsv")

    ir = mp.impression_ratio(logs["ad"])
    n_groups = min(cfg.evaluation.ir_diag_groups, len(ir))
    means = mp.ir_group_means(ir, n_groups)
    summary = {"policy": "ecpm", "n_groups": n_groups, "group_means": means,
               "uniform_level": cfg.sim.slots / cfg.sim.candidate_size,
               "top_bottom_ratio": (means[0] / means[-1] if means[-1] > 0 else None)}
    (data_dir / "ir_summary.json").write_text(json.dumps(summary, indent=1))

    names = ["catalog.json", "ir_summary.json"] + \
            [f"{n}_log.tsv" for n in logs] + [f"{n}_candidates.tsv" for n in logs]
    write_manifest(data_dir, RunManifest(
        stage="generate", config_digest=cfg.dataset_identity(),
        outputs=_digest_outputs(data_dir, names),
        timings={"wall_seconds": time.time() - t0}))
    return data_dir


def cmd_augment(cfg: ExperimentConfig) -> Path:
    """Unified training sets: merged (ad + pseudo-rec) and ads-only."""
    t0 = time.time()
    paths = _paths(cfg)
    data_dir, out_dir = paths["data"], paths["augment"]
    inputs = [data_dir / n for n in
              ("catalog.json", "ad_log.tsv", "ad_candidates.tsv",
               "rec_log.tsv", "rec_candidates.tsv")]
    check_inputs(data_dir, inputs)
    out_dir.mkdir(parents=True, exist_ok=True)

    catalog = mp.read_catalog(data_dir / "catalog.json")
    ad_log = mp.read_impression_log(data_dir / "ad_log.tsv", data_dir / "ad_candidates.tsv")
    rec_log = mp.read_impression_log(data_dir / "rec_log.tsv", data_dir / "rec_candidates.tsv")

    index = aug.build_item_ads_index(catalog.ads)
    retained = aug.retrieve_rec_samples(rec_log, index)
    pseudo = aug.map_pseudo_samples(retained, index, catalog,
                                    cfg.augmentation.k_recent, cfg.seed + 40)
    merged = aug.merge_training_set(ad_log, pseudo, catalog, cfg.seed + 41)
    ads_only = aug.merge_training_set(ad_log, [], catalog, cfg.seed + 41)
    aug.write_unified(merged, out_dir / "train_merged.tsv")
    aug.write_unified(ads_only, out_dir / "train_ads.tsv")

    write_manifest(out_dir, RunManifest(
        stage="augment", config_digest=cfg.dataset_identity(),
        inputs={p.name: file_digest(p) for p in inputs},
        outputs=_digest_outputs(out_dir, ["train_merged.tsv", "train_ads.tsv"]),
        timings={"wall_seconds": time.time() - t0,
                 "n_merged": len(merged), "n_ads_only": len(ads_only),
                 "n_pseudo": len(pseudo)}))
    return out_dir


def _variant_spec(cfg: ExperimentConfig, name: str) -> tuple[VariantSpec, dict]:
    if name in ABLATIONS:
        return VariantSpec("full", cfg.ips.propensity_source), ABLATIONS[name]
    cap = cfg.ips.cap if name == "ips_cap" else None
    return VariantSpec(name, cfg.ips.propensity_source, cap), {}


def _load_training_data(cfg: ExperimentConfig, name: str):
    paths = _paths(cfg)
    data_dir, aug_dir = paths["data"], paths["augment"]
    spec, overrides = _variant_spec(cfg, name)
    dataset_file = aug_dir / ("train_merged.tsv" if spec.uses_merged_data
                              else "train_ads.tsv")
    check_inputs(aug_dir, [dataset_file])
    check_inputs(data_dir, [data_dir / "catalog.json", data_dir / "ad_log.tsv",
                            data_dir / "ad_candidates.tsv"])
    catalog = mp.read_catalog(data_dir / "catalog.json")
    samples = aug.read_unified(dataset_file)
    model_cfg = variant_model_config(cfg.model_config(len(catalog.ads)),
                                     spec.kind, overrides)
    weights = None
    if spec.uses_weights:
        ad_log = mp.read_impression_log(data_dir / "ad_log.tsv",
                                        data_dir / "ad_candidates.tsv")
        prop = propensity_estimate(ad_log, spec.propensity_source)
        weights = sample_weights(spec, np.array([s.ad_id for s in samples]), prop)
    data = batch_from_samples(samples, model_cfg, weights)
    return spec, model_cfg, data, dataset_file


def _train_one(cfg: ExperimentConfig, name: str, seed: int) -> Path:
    spec, model_cfg, data, dataset_file = _load_training_data(cfg, name)
    run_dir = _paths(cfg)["train"] / name / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    result = train_variant(spec, data, model_cfg, cfg.training, seed)

    header = result.model.header()
    header.update({"variant": name, "train_seed": seed,
                   "dataset_digest": cfg.dataset_identity(),
                   "dataset_file_digest": file_digest(dataset_file)})
    save_checkpoint(result.model.store, run_dir / "checkpoint.npz", header)
    _write_curves(result.curves, run_dir / "curves.csv")
    _export_representations(result, data, run_dir / "representations.tsv")
    write_manifest(run_dir, RunManifest(
        stage=f"train/{name}/seed_{seed}", config_digest=cfg.dataset_identity(),
        inputs={dataset_file.name: file_digest(dataset_file)},
        outputs=_digest_outputs(run_dir, ["checkpoint.npz", "curves.csv",
                                          "representations.tsv"]),
        timings={"wall_seconds": time.time() - t0, **result.term_totals}))
    return run_dir


def _write_curves(rows: list[dict], path: Path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(f"{r.get(c, float('nan')):.10g}" for c in CURVE_COLUMNS) + "\n")


def _read_curves(path: Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        for line in fh:
            rows.append({k: float(v) for k, v in zip(header, line.rstrip("\n").split(","))})
    return rows


def _export_representations(result, data, path: Path) -> None:
    """(row id, source, x_inv, x_con) dump for external visualization;
    vectors are comma-joined decimals."""
    rng = np.random.default_rng([result.model.seed, 23])
    n = len(data)
    idx = np.sort(rng.choice(n, size=min(1024, n), replace=False))
    inv, con = result.model.representations(data.slice(idx))
    with open(path, "w") as fh:
        fh.write("#sample_index\tsource\tx_inv\tx_con\n")
        for row, i in enumerate(idx):
            src = "ad" if data.source[i] > 0.5 else "rec"
            fh.write(f"{i}\t{src}\t"
                     + ",".join(f"{v:.8g}" for v in inv[row]) + "\t"
                     + ",".join(f"{v:.8g}" for v in con[row]) + "\n")


def cmd_train(cfg: ExperimentConfig, variant: str | None, seed: int | None,
              threads: int = 1) -> list[Path]:
    names = [variant] if variant else list(cfg.variants)
    for name in names:
        if name not in VARIANT_NAMES:
            raise ConfigError(f"unknown variant {name!r}")
    seeds = [seed] if seed is not None else list(cfg.seeds)
    jobs = [(name, s) for name in names for s in seeds]
    return _run_jobs(cfg, jobs, threads)


def _run_jobs(cfg: ExperimentConfig, jobs: list[tuple[str, int]], threads: int) -> list[Path]:
    if threads <= 1 or len(jobs) <= 1:
        return [_train_one(cfg, name, s) for name, s in jobs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_train_one, cfg, name, s) for name, s in jobs]
        return [f.result() for f in futures]


def cmd_evaluate(cfg: ExperimentConfig, variant: str, seed: int) -> Path:
    """Score the uniform test log with a trained checkpoint and write the
    per-run metrics report (overall, IR groups, training curves)."""
    paths = _paths(cfg)
    data_dir = paths["data"]
    run_dir = paths["train"] / variant / f"seed_{seed}"
    check_inputs(data_dir, [data_dir / n for n in
                            ("catalog.json", "test_log.tsv", "test_candidates.tsv",
                             "ad_log.tsv", "ad_candidates.tsv")])
    check_inputs(run_dir, [run_dir / "checkpoint.npz", run_dir / "curves.csv"])

    catalog = mp.read_catalog(data_dir / "catalog.json")
    store, header = load_checkpoint(run_dir / "checkpoint.npz")
    spec, overrides = _variant_spec(cfg, variant)
    expected = variant_model_config(cfg.model_config(len(catalog.ads)),
                                    spec.kind, overrides)
    got = ModelConfig.from_dict(header["model_config"])
    if got != expected or header.get("variant") != variant:
        raise ConfigError(
            f"checkpoint {run_dir / 'checkpoint.npz'} was trained with a different "
            "model configuration than this config requests; refusing to evaluate")
    if header.get("dataset_digest") != cfg.dataset_identity():
        raise StaleInputError("checkpoint was trained on a different dataset identity")
    model = CTRModel(got, header["seed"], store)

    test_log = mp.read_impression_log(data_dir / "test_log.tsv",
                                      data_dir / "test_candidates.tsv")
    samples = aug.samples_from_ad_log(test_log, catalog)
    ad_log = mp.read_impression_log(data_dir / "ad_log.tsv",
                                    data_dir / "ad_candidates.tsv")
    ir = mp.impression_ratio(ad_log)
    kept = [s for s in samples if s.ad_id in ir]
    data = batch_from_samples(kept, got)
    y_hat = model.predict(data)
    scored = ScoredSet(y_hat, data.label.astype(np.int64), data.ad)

    from .metrics import auc as auc_fn, ece as ece_fn
    scheme = cfg.evaluation.group_scheme
    scheme = scheme if scheme == "quartiles" else int(scheme)
    report = MetricsReport(
        variant=variant, seed=seed,
        auc=auc_fn(scored.y_hat, scored.y), ece=ece_fn(scored.y_hat, scored.y),
        n_samples=len(scored),
        groups=group_report(scored, ir, scheme),
        curves=_read_curves(run_dir / "curves.csv"),
        dataset_digest=cfg.dataset_identity(),
        config_digest=config_digest(asdict(cfg)),
        meta={"dropped_test_samples_without_ir": len(samples) - len(kept),
              "checkpoint": str(run_dir / "checkpoint.npz")})
    eval_dir = paths["eval"]
    eval_dir.mkdir(parents=True, exist_ok=True)
    out = eval_dir / f"report_{variant}_seed{seed}.json"
    report.save(out)
    return out


def cmd_ablate(cfg: ExperimentConfig, seed: int | None, threads: int = 1) -> list[Path]:
    """Train and evaluate the full model and its three single-switch
    ablations on one dataset."""
    s = seed if seed is not None else cfg.seeds[0]
    names = ["full", *ABLATIONS]
    _run_jobs(cfg, [(n, s) for n in names], threads)
    return [cmd_evaluate(cfg, n, s) for n in names]


def cmd_report(cfg: ExperimentConfig, report_paths: list[Path] | None,
               render_figures: bool = True) -> tuple[Path, str]:
    """Aggregate evaluation reports into the comparison document, the
    delimited table, and the report figures."""
    paths = _paths(cfg)
    if not report_paths:
        report_paths = sorted(paths["eval"].glob("report_*.json"))
    if not report_paths:
        raise ConfigError("no evaluation reports found; run `ssblab evaluate` first")
    reports = [MetricsReport.load(p) for p in report_paths]
    comparison, tsv, table = render_report(reports, baseline="base")

    report_dir = paths["report"]
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "comparison.json").write_text(comparison.to_json())
    (report_dir / "comparison.tsv").write_text(tsv)

    outputs = ["comparison.json", "comparison.tsv"]
    if render_figures:
        fig_dir = report_dir / "figures"
        curves = {f"{r.variant}/seed{r.seed}": r.curves for r in reports if r.curves}
        fig_loss_curves(curves, fig_dir / "loss_curves.png")
        fig_adversary_auc(curves, fig_dir / "adversary_auc.png")
        fig_variant_bars(comparison, fig_dir / "variant_metrics.png")
        fig_group_auc(comparison, fig_dir / "group_auc.png")
        ir_summary = paths["data"] / "ir_summary.json"
        if ir_summary.exists():
            doc = json.loads(ir_summary.read_text())
            fig_ir_groups(doc["group_means"], doc.get("uniform_level"),
                          fig_dir / "ir_groups.png")
        outputs += [f"figures/{p.name}" for p in sorted(fig_dir.glob("*.png"))]

    write_manifest(report_dir, RunManifest(
        stage="report", config_digest=config_digest(asdict(cfg)),
        inputs={Path(p).name: file_digest(p) for p in report_paths},
        outputs=_digest_outputs(report_dir, outputs)))
    return report_dir / "comparison.json", table


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment config")
    common.add_argument("--out-dir", default=None, help="override config out_dir")
    common.add_argument("--seed", type=int, default=None,
                        help="single training seed (train/evaluate/ablate)")
    common.add_argument("--variant", default=None, choices=VARIANT_NAMES,
                        help="variant for train/evaluate")
    common.add_argument("--threads", type=int, default=1,
                        help="parallel training processes for train/ablate")
    p = argparse.ArgumentParser(
        prog="ssblab",
        description="Synthetic-marketplace lab for sample selection bias in ads CTR.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="catalog + ad/rec/test logs")
    sub.add_parser("augment", parents=[common], help="pseudo samples + unified training sets")
    sub.add_parser("train", parents=[common], help="train configured variants")
    sub.add_parser("evaluate", parents=[common], help="score the uniform test set")
    sub.add_parser("ablate", parents=[common], help="full model plus single-switch ablations")
    rep = sub.add_parser("report", parents=[common], help="comparison tables + figures")
    rep.add_argument("reports", nargs="*", help="report JSON files (default: eval/)")
    rep.add_argument("--no-figures", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(sys.argv[1:] if argv is None else argv)
    try:
        overrides = {"out_dir": args.out_dir} if args.out_dir else {}
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            out = cmd_generate(cfg)
            print(f"wrote dataset to {out}")
        elif args.command == "augment":
            out = cmd_augment(cfg)
            print(f"wrote unified training sets to {out}")
        elif args.command == "train":
            dirs = cmd_train(cfg, args.variant, args.seed, args.threads)
            for d in dirs:
                print(f"trained {d}")
        elif args.command == "evaluate":
            if not args.variant:
                raise ConfigError("evaluate requires --variant")
            seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
            for s in seeds:
                out = cmd_evaluate(cfg, args.variant, s)
                print(f"wrote {out}")
        elif args.command == "ablate":
            outs = cmd_ablate(cfg, args.seed, args.threads)
            for o in outs:
                print(f"wrote {o}")
        elif args.command == "report":
            paths = [Path(r) for r in getattr(args, "reports", [])] or None
            out, table = cmd_report(cfg, paths,
                                    render_figures=not getattr(args, "no_figures", False))
            print(table)
            print(f"\nwrote {out}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StaleInputError as exc:
        print(f"stale inputs: {exc}", file=sys.stderr)
        return 3
    except GraphNumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
