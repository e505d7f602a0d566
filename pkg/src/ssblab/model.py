"""CTR network with source-aware normalization and disentangled heads.

The architecture: id embeddings plus target-conditioned attention over the
behavior sequence produce a wide representation, batch normalization (one
statistic set per sample source, or a shared set), a backbone MLP, then two
projection branches -- an "invariant" representation pushed to be
indistinguishable across sources by an adversarial discriminator behind a
gradient-reversal node, and a "confounder" representation decorrelated
from it by a pairwise Pearson penalty.  Prediction heads consume the
concatenation of both branches; each source has its own head, and live ad
scoring always takes the ad path.

Ablation switches (`use_source_bn`, `use_alignment`, `use_decorrelation`)
remove one mechanism at a time; `source_aware_heads=False` collapses
projections and heads into a single shared path (the naive-merge baseline).
A model instance is exclusively owned during a training step; frozen stores
may be scored concurrently.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict

import numpy as np

from .augment import UnifiedSample
from .marketplace import CatalogConfig
from .optim import ParameterStore
from .tape import Tape, Value

__all__ = ["ModelConfig", "DatasetTensors", "BatchTensors", "CTRModel",
           "batch_from_samples", "combine_loss_terms"]


@dataclass(frozen=True)
class ModelConfig:
    # vocabulary sizes (from the catalog)
    n_ads: int
    n_items: int
    n_categories: int
    n_brands: int
    n_campaigns: int
    n_age_buckets: int
    n_gender_buckets: int
    n_time_buckets: int
    n_devices: int
    max_behavior_len: int
    # architecture
    embedding_dim: int = 16
    attn_hidden: int = 32
    backbone: tuple[int, ...] = (256, 128)
    proj_hidden: int = 128
    proj_dim: int = 128
    head_hidden: int = 64
    disc_hidden: int = 64
    # loss weights
    alpha: float = 0.1
    lambda_align: float = 0.005
    lambda_decor: float = 0.5
    pearson_eps: float = 1e-8
    # normalization
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    # switches
    use_source_bn: bool = True
    use_alignment: bool = True
    use_decorrelation: bool = True
    source_aware_heads: bool = True

    def validate(self) -> list[str]:
        errs = []
        if self.proj_dim <= 0:
            errs.append("proj_dim must be positive")
        if self.lambda_align < 0 or self.lambda_decor < 0:
            errs.append("loss weights must be >= 0")
        if self.alpha < 0:
            errs.append("gradient reversal scale must be >= 0")
        if not self.backbone:
            errs.append("backbone widths must be non-empty")
        return errs

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = tuple(d["backbone"])
        return cls(**d)

    @classmethod
    def from_catalog(cls, cat_cfg: CatalogConfig, n_ads: int, **overrides) -> "ModelConfig":
        return cls(
            n_ads=n_ads, n_items=cat_cfg.n_items,
            n_categories=cat_cfg.n_categories, n_brands=cat_cfg.n_brands,
            n_campaigns=cat_cfg.n_campaigns, n_age_buckets=cat_cfg.n_age_buckets,
            n_gender_buckets=cat_cfg.n_gender_buckets,
            n_time_buckets=cat_cfg.n_time_buckets, n_devices=cat_cfg.n_devices,
            max_behavior_len=cat_cfg.behavior_len_max, **overrides)


@dataclass
class DatasetTensors:
    """Column arrays for a whole dataset; batches are row slices."""
    age: np.ndarray
    gender: np.ndarray
    ad: np.ndarray
    item: np.ndarray
    cat: np.ndarray
    brand: np.ndarray
    campaign: np.ndarray
    time_bucket: np.ndarray
    device: np.ndarray
    beh_items: np.ndarray          # (N, T), zero-padded
    beh_cats: np.ndarray
    beh_mask: np.ndarray           # (N, T) float 0/1
    label: np.ndarray              # (N,) float 0/1
    source: np.ndarray             # (N,) float, 1=ad 0=rec
    weight: np.ndarray             # (N,) per-sample loss weight

    def __len__(self) -> int:
        return self.label.shape[0]

    def slice(self, idx: np.ndarray) -> "BatchTensors":
        return BatchTensors(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})


@dataclass
class BatchTensors(DatasetTensors):
    pass


def batch_from_samples(samples: list[UnifiedSample], cfg: ModelConfig,
                       weights: np.ndarray | None = None) -> DatasetTensors:
    n = len(samples)
    t = cfg.max_behavior_len
    cols = {name: np.zeros(n, dtype=np.int64)
            for name in ("age", "gender", "ad", "item", "cat", "brand",
                         "campaign", "time_bucket", "device")}
    beh_items = np.zeros((n, t), dtype=np.int64)
    beh_cats = np.zeros((n, t), dtype=np.int64)
    beh_mask = np.zeros((n, t))
    label = np.zeros(n)
    source = np.zeros(n)
    for i, s in enumerate(samples):
        cols["age"][i] = s.age_bucket
        cols["gender"][i] = s.gender_bucket
        cols["ad"][i] = s.ad_id
        cols["item"][i] = s.item_id
        cols["cat"][i] = s.category_id
        cols["brand"][i] = s.brand_id
        cols["campaign"][i] = s.campaign_feature
        cols["time_bucket"][i] = s.time_bucket
        cols["device"][i] = s.device
        for j, (it, c) in enumerate(s.behavior_seq[:t]):
            beh_items[i, j] = it
            beh_cats[i, j] = c
            beh_mask[i, j] = 1.0
        label[i] = s.label
        source[i] = 1.0 if s.source == "ad" else 0.0
    _check_vocab(cols, beh_items, beh_cats, cfg)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    return DatasetTensors(cols["age"], cols["gender"], cols["ad"], cols["item"],
                          cols["cat"], cols["brand"], cols["campaign"],
                          cols["time_bucket"], cols["device"],
                          beh_items, beh_cats, beh_mask, label, source, w)


def _check_vocab(cols, beh_items, beh_cats, cfg: ModelConfig) -> None:
    bounds = {"age": cfg.n_age_buckets, "gender": cfg.n_gender_buckets,
              "ad": cfg.n_ads, "item": cfg.n_items, "cat": cfg.n_categories,
              "brand": cfg.n_brands, "campaign": cfg.n_campaigns,
              "time_bucket": cfg.n_time_buckets, "device": cfg.n_devices}
    for name, bound in bounds.items():
        arr = cols[name]
        if arr.size and (arr.min() < 0 or arr.max() >= bound):
            raise ValueError(f"feature id out of range for {name!r} (vocab {bound})")
    if beh_items.size and beh_items.max() >= cfg.n_items:
        raise ValueError("behavior item id out of range")
    if beh_cats.size and beh_cats.max() >= cfg.n_categories:
        raise ValueError("behavior category id out of range")


def combine_loss_terms(l_c: float, l_a: float, l_d: float,
                       lambda_align: float, lambda_decor: float) -> float:
    """Joint objective: prediction loss plus weighted alignment and
    decorrelation terms (disabled terms enter as exact zeros)."""
    return l_c + lambda_align * l_a + lambda_decor * l_d


def _name_rng(seed: int, name: str) -> np.random.Generator:
    h = int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")
    return np.random.default_rng([seed, h])


class CTRModel:
    """Network, parameters, and loss assembly for one variant configuration."""

    def __init__(self, cfg: ModelConfig, seed: int,
                 store: ParameterStore | None = None) -> None:
        errs = cfg.validate()
        if errs:
            raise ValueError("invalid model config: " + "; ".join(errs))
        self.cfg = cfg
        self.seed = seed
        self.store = store if store is not None else self._init_store(seed)

    # -- parameter construction ------------------------------------------------

    def _init_store(self, seed: int) -> ParameterStore:
        cfg = self.cfg
        store = ParameterStore()
        e = cfg.embedding_dim

        def emb(name: str, vocab: int) -> None:
            store.create(f"emb/{name}",
                         _name_rng(seed, f"emb/{name}").normal(0.0, 0.05, (vocab, e)))

        emb("age", cfg.n_age_buckets)
        emb("gender", cfg.n_gender_buckets)
        emb("ad", cfg.n_ads)
        emb("item", cfg.n_items)
        emb("cat", cfg.n_categories)
        emb("brand", cfg.n_brands)
        emb("campaign", cfg.n_campaigns)
        emb("time", cfg.n_time_buckets)
        emb("device", cfg.n_devices)

        def affine(prefix: str, n_in: int, n_out: int, slope: bool) -> None:
            scale = np.sqrt(2.0 / (n_in + n_out))
            store.create(f"{prefix}/w",
                         _name_rng(seed, f"{prefix}/w").normal(0.0, scale, (n_in, n_out)))
            store.create(f"{prefix}/b", np.zeros(n_out))
            if slope:
                store.create(f"{prefix}/slope", np.full(n_out, 0.25))

        affine("attn/0", 6 * e, cfg.attn_hidden, slope=False)
        affine("attn/out", cfg.attn_hidden, 1, slope=False)

        width = 11 * e
        for i, out in enumerate(cfg.backbone):
            affine(f"backbone/{i}", width, out, slope=True)
            width = out

        for group in self._bn_groups():
            store.create(f"bn/{group}/gamma", np.ones(11 * e))
            store.create(f"bn/{group}/beta", np.zeros(11 * e))
            store.create(f"bn/{group}/running_mean", np.zeros(11 * e))
            store.create(f"bn/{group}/running_var", np.ones(11 * e))

        for branch in ("inv", "con"):
            for side in self._sides():
                affine(f"proj/{branch}/{side}/0", width, cfg.proj_hidden, slope=True)
                affine(f"proj/{branch}/{side}/out", cfg.proj_hidden, cfg.proj_dim, slope=False)
        for side in self._sides():
            affine(f"head/{side}/0", 2 * cfg.proj_dim, cfg.head_hidden, slope=True)
            affine(f"head/{side}/out", cfg.head_hidden, 1, slope=False)
        if cfg.use_alignment:
            affine("disc/0", cfg.proj_dim, cfg.disc_hidden, slope=False)
            affine("disc/out", cfg.disc_hidden, 1, slope=False)
        return store

    def _sides(self) -> tuple[str, ...]:
        return ("ad", "rec") if self.cfg.source_aware_heads else ("shared",)

    def _bn_groups(self) -> tuple[str, ...]:
        return ("ad", "rec") if self.cfg.use_source_bn else ("shared",)

    # -- building blocks ----------------------------------------------------------

    def _affine_act(self, tape: Tape, x: Value, prefix: str,
                    activation: str | None) -> Value:
        p = self.store
        out = tape.affine(x, p[f"{prefix}/w"], p[f"{prefix}/b"])
        if activation == "prelu":
            out = tape.prelu(out, p[f"{prefix}/slope"])
        elif activation == "relu":
            out = tape.relu(out)
        return out

    def _embed(self, tape: Tape, batch: BatchTensors) -> Value:
        p = self.store
        b, t = batch.beh_items.shape
        e = self.cfg.embedding_dim
        beh = tape.concat([tape.take0(p["emb/item"], batch.beh_items),
                           tape.take0(p["emb/cat"], batch.beh_cats)], axis=-1)
        tgt = tape.concat([tape.take0(p["emb/item"], batch.item),
                           tape.take0(p["emb/cat"], batch.cat)], axis=-1)
        tgt_b = tape.broadcast_to(tape.reshape(tgt, (b, 1, 2 * e)), (b, t, 2 * e))
        att_in = tape.concat([beh, tgt_b, tape.mul(beh, tgt_b)], axis=-1)
        hidden = self._affine_act(tape, att_in, "attn/0", "relu")
        logits = tape.reshape(self._affine_act(tape, hidden, "attn/out", None), (b, t))
        wts = tape.masked_softmax(logits, batch.beh_mask)
        agg = tape.sum(tape.mul(beh, tape.reshape(wts, (b, t, 1))), axis=1)
        parts = [tape.take0(p["emb/age"], batch.age),
                 tape.take0(p["emb/gender"], batch.gender),
                 agg,
                 tape.take0(p["emb/ad"], batch.ad),
                 tape.take0(p["emb/item"], batch.item),
                 tape.take0(p["emb/cat"], batch.cat),
                 tape.take0(p["emb/brand"], batch.brand),
                 tape.take0(p["emb/campaign"], batch.campaign),
                 tape.take0(p["emb/time"], batch.time_bucket),
                 tape.take0(p["emb/device"], batch.device)]
        return tape.concat(parts, axis=-1)

    def _batch_norm(self, tape: Tape, e: Value, batch: BatchTensors, mode: str,
                    update_running: bool, force_ad_path: bool) -> Value:
        cfg = self.cfg
        p = self.store
        if force_ad_path and cfg.use_source_bn:
            groups = [("ad", np.ones(len(batch)))]
        elif cfg.use_source_bn:
            groups = [("ad", batch.source), ("rec", 1.0 - batch.source)]
        else:
            groups = [("shared", np.ones(len(batch)))]
        present = [(g, m) for g, m in groups if m.sum() > 0]
        terms = []
        for name, mask in present:
            count = mask.sum()
            if mode == "train":
                if count == 1:
                    raise ValueError(
                        f"batch has a single '{name}'-source row; variance over one "
                        "row is undefined -- use a larger batch")
                mu = tape.masked_mean0(e, mask)
                var = tape.masked_mean0(tape.square(tape.sub(e, mu)), mask)
                if update_running:
                    m = cfg.bn_momentum
                    rm = p[f"bn/{name}/running_mean"].data
                    rv = p[f"bn/{name}/running_var"].data
                    rm *= m
                    rm += (1.0 - m) * mu.data
                    rv *= m
                    rv += (1.0 - m) * var.data
                norm = tape.div(tape.sub(e, mu), tape.sqrt(tape.add(var, cfg.bn_eps)))
            elif mode == "infer":
                rm = p[f"bn/{name}/running_mean"].data
                rv = p[f"bn/{name}/running_var"].data
                norm = tape.mul(tape.sub(e, rm), 1.0 / np.sqrt(rv + cfg.bn_eps))
            else:
                raise ValueError(f"unknown mode {mode!r}")
            out = tape.add(tape.mul(norm, p[f"bn/{name}/gamma"]), p[f"bn/{name}/beta"])
            if len(present) > 1:
                out = tape.mul(out, mask[:, None])
            terms.append(out)
        result = terms[0]
        for t in terms[1:]:
            result = tape.add(result, t)
        return result

    def _routed_mlp(self, tape: Tape, x: Value, prefix: str, batch: BatchTensors,
                    force_ad_path: bool, hidden_act: str = "prelu") -> Value:
        """Per-source MLP branch combined by the source mask (shared path when
        heads are not source-aware; the ad path alone when forced)."""

        def run(side: str) -> Value:
            h = self._affine_act(tape, x, f"{prefix}/{side}/0", hidden_act)
            return self._affine_act(tape, h, f"{prefix}/{side}/out", None)

        if not self.cfg.source_aware_heads:
            return run("shared")
        if force_ad_path:
            return run("ad")
        ad_mask = batch.source
        n_ad = ad_mask.sum()
        if n_ad == len(batch):
            return run("ad")
        if n_ad == 0:
            return run("rec")
        ad_out = tape.mul(run("ad"), ad_mask[:, None])
        rec_out = tape.mul(run("rec"), (1.0 - ad_mask)[:, None])
        return tape.add(ad_out, rec_out)

    # -- forward -----------------------------------------------------------------

    def forward(self, tape: Tape, batch: BatchTensors, mode: str = "train",
                update_running: bool = True, force_ad_path: bool = False) -> dict:
        """Run the network; returns intermediate Values keyed by name."""
        b = len(batch)
        e = self._embed(tape, batch)
        e_norm = self._batch_norm(tape, e, batch, mode, update_running and mode == "train",
                                  force_ad_path)
        x = e_norm
        for i in range(len(self.cfg.backbone)):
            x = self._affine_act(tape, x, f"backbone/{i}", "prelu")
        x_inv = self._routed_mlp(tape, x, "proj/inv", batch, force_ad_path)
        x_con = self._routed_mlp(tape, x, "proj/con", batch, force_ad_path)
        x_new = tape.concat([x_inv, x_con], axis=-1)
        logit = tape.reshape(self._routed_mlp(tape, x_new, "head", batch, force_ad_path), (b,))
        y_hat = tape.sigmoid(logit)
        return {"e": e, "e_norm": e_norm, "x": x, "x_inv": x_inv,
                "x_con": x_con, "y_hat": y_hat}

    def discriminator_scores(self, tape: Tape, x_inv: Value) -> Value:
        """Source-probability head behind the gradient reversal node."""
        z = tape.gradient_reversal(x_inv, self.cfg.alpha)
        h = self._affine_act(tape, z, "disc/0", "relu")
        logit = tape.reshape(self._affine_act(tape, h, "disc/out", None), (x_inv.shape[0],))
        return tape.sigmoid(logit)

    def loss(self, tape: Tape, batch: BatchTensors, fwd: dict) -> tuple[Value, dict]:
        """Joint objective and raw per-term floats for logging."""
        cfg = self.cfg
        l_total = tape.binary_cross_entropy(fwd["y_hat"], batch.label, "sum",
                                            weights=batch.weight)
        terms = {"l_c": float(l_total.data), "l_a": 0.0, "l_d": 0.0}
        ad_rows = np.nonzero(batch.source > 0.5)[0]
        rec_rows = np.nonzero(batch.source < 0.5)[0]
        if cfg.use_alignment and ad_rows.size and rec_rows.size:
            s_hat = self.discriminator_scores(tape, fwd["x_inv"])
            l_a = tape.binary_cross_entropy(s_hat, batch.source, "sum")
            terms["l_a"] = float(l_a.data)
            l_total = tape.add(l_total, tape.mul(l_a, cfg.lambda_align))
        if cfg.use_decorrelation:
            l_d = None
            for rows in (ad_rows, rec_rows):
                if rows.size < 2:
                    continue
                pen = tape.pearson_pairwise_penalty(
                    tape.take0(fwd["x_inv"], rows), tape.take0(fwd["x_con"], rows),
                    cfg.pearson_eps)
                l_d = pen if l_d is None else tape.add(l_d, pen)
            if l_d is not None:
                terms["l_d"] = float(l_d.data)
                l_total = tape.add(l_total, tape.mul(l_d, cfg.lambda_decor))
        terms["total"] = float(l_total.data)
        return l_total, terms

    # -- frozen-parameter evaluation ------------------------------------------------

    def predict(self, data: DatasetTensors, batch_size: int = 4096) -> np.ndarray:
        """Scores for live ad traffic: running statistics, ad-side branches,
        ad prediction head, regardless of stored source flags."""
        out = np.empty(len(data))
        for lo in range(0, len(data), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(data)))
            fwd = self.forward(Tape(), data.slice(idx), mode="infer", force_ad_path=True)
            out[idx] = fwd["y_hat"].data
        return out

    def adversary_scores(self, data: DatasetTensors, batch_size: int = 4096) -> np.ndarray:
        """Discriminator outputs on source-routed representations (running
        statistics); diagnostic for how separable the sources still are."""
        out = np.empty(len(data))
        for lo in range(0, len(data), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(data)))
            tape = Tape()
            fwd = self.forward(tape, data.slice(idx), mode="infer")
            out[idx] = self.discriminator_scores(tape, fwd["x_inv"]).data
        return out

    def representations(self, data: DatasetTensors,
                        batch_size: int = 4096) -> tuple[np.ndarray, np.ndarray]:
        """(x_inv, x_con) pairs under source routing and running statistics."""
        inv = np.empty((len(data), self.cfg.proj_dim))
        con = np.empty((len(data), self.cfg.proj_dim))
        for lo in range(0, len(data), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(data)))
            fwd = self.forward(Tape(), data.slice(idx), mode="infer")
            inv[idx] = fwd["x_inv"].data
            con[idx] = fwd["x_con"].data
        return inv, con

    def header(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["backbone"] = list(cfg["backbone"])
        return {"model_config": cfg, "seed": self.seed}
