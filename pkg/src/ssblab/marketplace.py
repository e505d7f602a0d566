"""Synthetic two-system marketplace with known ground-truth click rates.

Generates a catalog of users, organic items, and ads promoting a subset of
those items, then logs display sessions under three selection policies:

* ``ecpm``    -- rank candidates by proxy_score x bid (the ad system),
* ``pctr``    -- rank by proxy_score alone (the recommendation system),
* ``uniform`` -- random display (unbiased evaluation traffic).

Click labels are Bernoulli draws from a ground-truth probability that
depends only on user-item interest, item popularity, and context -- never
on whether the subject was shown as an ad or as an organic item.  Each
session's candidate set is recorded so per-ad display opportunity can be
measured exactly.

Everything is a pure function of (config, seed); catalogs are immutable
and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

__all__ = [
    "CatalogConfig", "UserProfile", "ItemProfile", "AdProfile", "Catalog",
    "ImpressionRecord", "ImpressionLog",
    "generate_catalog", "true_ctr", "make_noisy_truth_proxy", "run_sessions",
    "impression_ratio", "ir_group_partition", "ir_group_means",
    "rerank_flip_fraction",
    "write_catalog", "read_catalog", "write_impression_log", "read_impression_log",
]

POLICIES = ("ecpm", "pctr", "uniform")

LOG_COLUMNS = ("session_id", "source", "user_id", "subject_id",
               "time_bucket", "device", "label")


@dataclass(frozen=True)
class CatalogConfig:
    """Sizes and ground-truth knobs of the synthetic world."""
    n_users: int = 400
    n_items: int = 1500
    ad_coverage: float = 0.45       # fraction of items carrying >= 1 ad
    max_ads_per_item: int = 3
    n_categories: int = 30
    n_brands: int = 60
    n_campaigns: int = 40
    n_age_buckets: int = 7
    n_gender_buckets: int = 3
    n_time_buckets: int = 8
    n_devices: int = 3
    latent_dim: int = 8
    behavior_len_min: int = 2
    behavior_len_max: int = 12
    popularity_sigma: float = 1.0   # lognormal sigma; heavy-tailed on purpose
    bid_sigma: float = 1.0          # lognormal sigma of ad bids
    affinity_weight: float = 1.0
    popularity_weight: float = 0.7
    context_amplitude: float = 0.15
    base_logit: float = -2.2
    category_mix: float = 0.6       # share of item latents from category prototype
    profile_mix: float = 0.5        # share of user latents from (age, gender) prototype

    def validate(self) -> list[str]:
        errs = []
        if self.n_users <= 0:
            errs.append("n_users must be positive")
        if self.n_items <= 0:
            errs.append("n_items must be positive")
        if not (0.0 < self.ad_coverage < 1.0):
            errs.append("ad_coverage must lie strictly inside (0, 1)")
        if self.latent_dim < 2:
            errs.append("latent_dim must be >= 2")
        if self.max_ads_per_item < 1:
            errs.append("max_ads_per_item must be >= 1")
        if self.behavior_len_min < 0 or self.behavior_len_max < self.behavior_len_min:
            errs.append("behavior length bounds out of order")
        for name in ("n_categories", "n_brands", "n_campaigns", "n_age_buckets",
                     "n_gender_buckets", "n_time_buckets", "n_devices"):
            if getattr(self, name) <= 0:
                errs.append(f"{name} must be positive")
        return errs


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    latent_pref: np.ndarray         # ground truth only; never fed to models
    age_bucket: int
    gender_bucket: int
    behavior_seq: tuple[tuple[int, int], ...]   # (item_id, category_id)


@dataclass(frozen=True)
class ItemProfile:
    item_id: int
    category_id: int
    brand_id: int
    latent_attr: np.ndarray         # ground truth only
    popularity: float


@dataclass(frozen=True)
class AdProfile:
    ad_id: int
    item_id: int
    campaign_feature: int
    bid: float
    creation_step: int


@dataclass
class Catalog:
    """The synthetic world: users, items, ads, and the item<->ad relation."""
    config: CatalogConfig
    users: list[UserProfile]
    items: list[ItemProfile]
    ads: list[AdProfile]

    def __post_init__(self) -> None:
        self._item_latents = np.stack([i.latent_attr for i in self.items])
        self._item_pop_logit = np.log(np.array([i.popularity for i in self.items]))
        self._ad_item = np.array([a.item_id for a in self.ads], dtype=np.int64)
        self._ad_bid = np.array([a.bid for a in self.ads])

    @property
    def n_categories(self) -> int:
        return self.config.n_categories

    def items_with_ads(self) -> set[int]:
        return set(self._ad_item.tolist())

    def subject_item_ids(self, subject_ids: np.ndarray, source: str) -> np.ndarray:
        """Resolve ad ids (source='ad') or item ids (source='rec') to item ids."""
        subject_ids = np.asarray(subject_ids)
        if source == "ad":
            return self._ad_item[subject_ids]
        if source == "rec":
            return subject_ids
        raise ValueError(f"unknown source {source!r}")


@dataclass(frozen=True)
class ImpressionRecord:
    session_id: int
    user_id: int
    subject_id: int                  # ad_id when source='ad', item_id when source='rec'
    time_bucket: int
    device: int
    label: int
    source: str


@dataclass
class ImpressionLog:
    records: list[ImpressionRecord]
    candidate_sets: dict[int, np.ndarray]    # session_id -> candidate subject ids
    source: str
    policy: str
    slots: int
    candidate_size: int

    def __len__(self) -> int:
        return len(self.records)


# --------------------------------------------------------------------------
# catalog generation and the ground-truth click model
# --------------------------------------------------------------------------

def generate_catalog(config: CatalogConfig, seed: int) -> Catalog:
    """Deterministically draw the synthetic world for a config and seed."""
    errs = config.validate()
    if errs:
        raise ValueError("invalid catalog config: " + "; ".join(errs))
    rng = np.random.default_rng([seed, 101])
    dim = config.latent_dim

    # Items: category prototypes give latent structure models can reach via ids.
    cat_proto = rng.normal(0.0, 1.0, size=(config.n_categories, dim))
    item_cat = rng.integers(0, config.n_categories, size=config.n_items)
    item_brand = rng.integers(0, config.n_brands, size=config.n_items)
    item_noise = rng.normal(0.0, 1.0, size=(config.n_items, dim))
    w = config.category_mix
    item_lat = w * cat_proto[item_cat] + (1.0 - w) * item_noise
    popularity = rng.lognormal(0.0, config.popularity_sigma, size=config.n_items)
    items = [ItemProfile(i, int(item_cat[i]), int(item_brand[i]),
                         item_lat[i].copy(), float(popularity[i]))
             for i in range(config.n_items)]

    # Users: latents anchored to (age, gender) prototypes plus personal noise.
    proto = rng.normal(0.0, 1.0, size=(config.n_age_buckets, config.n_gender_buckets, dim))
    age = rng.integers(0, config.n_age_buckets, size=config.n_users)
    gender = rng.integers(0, config.n_gender_buckets, size=config.n_users)
    user_noise = rng.normal(0.0, 1.0, size=(config.n_users, dim))
    pw = config.profile_mix
    user_lat = pw * proto[age, gender] + (1.0 - pw) * user_noise

    # Behavior sequences: affinity- and popularity-weighted item draws.
    affinity = user_lat @ item_lat.T / np.sqrt(dim)
    beh_logits = 2.0 * affinity + 0.5 * np.log(popularity)[None, :]
    users = []
    for u in range(config.n_users):
        length = int(rng.integers(config.behavior_len_min, config.behavior_len_max + 1))
        probs = np.exp(beh_logits[u] - beh_logits[u].max())
        probs /= probs.sum()
        picked = rng.choice(config.n_items, size=length, replace=False, p=probs)
        seq = tuple((int(i), int(item_cat[i])) for i in picked)
        users.append(UserProfile(u, user_lat[u].copy(), int(age[u]), int(gender[u]), seq))

    # Ads: a coverage-sized item subset, 1..max ads each, dense ids, bids
    # lognormal (heavy-tailed).  Creation steps are a global shuffle assigned
    # in ascending order within each item so recency ordering is non-trivial
    # but strictly increasing in ad_id per item.
    n_covered = int(round(config.ad_coverage * config.n_items))
    n_covered = min(max(n_covered, 1), config.n_items - 1)
    covered = np.sort(rng.choice(config.n_items, size=n_covered, replace=False))
    counts = rng.integers(1, config.max_ads_per_item + 1, size=n_covered)
    total_ads = int(counts.sum())
    steps = rng.permutation(total_ads)
    bids = rng.lognormal(0.0, config.bid_sigma, size=total_ads)
    campaigns = rng.integers(0, config.n_campaigns, size=total_ads)
    ads = []
    cursor = 0
    for item_id, k in zip(covered, counts):
        item_steps = np.sort(steps[cursor:cursor + int(k)])
        for j in range(int(k)):
            ad_id = cursor + j
            ads.append(AdProfile(ad_id, int(item_id), int(campaigns[ad_id]),
                                 float(bids[ad_id]), int(item_steps[j])))
        cursor += int(k)

    return Catalog(config=config, users=users, items=items, ads=ads)


def true_ctr(user: UserProfile, item: ItemProfile, context: tuple[int, int],
             config: CatalogConfig) -> float:
    """Ground-truth click probability for displaying `item` to `user`.

    An ad shares the probability of its underlying item by construction:
    clicks depend on interest, popularity, and context, not on which system
    displayed the subject.
    """
    if user.latent_pref.shape != item.latent_attr.shape:
        raise ValueError("latent dimension mismatch")
    logit = _ctr_logits(user.latent_pref[None, :], item.latent_attr[None, :],
                        np.log(item.popularity), context, config)[0]
    return float(1.0 / (1.0 + np.exp(-logit)))


def _context_offset(time_bucket, device, config: CatalogConfig):
    t = (np.asarray(time_bucket, dtype=np.float64) + 0.5) / config.n_time_buckets - 0.5
    d = (np.asarray(device, dtype=np.float64) + 0.5) / config.n_devices - 0.5
    return config.context_amplitude * (t + d)


def _ctr_logits(user_lat, item_lat, item_pop_logit, context, config):
    dot = (user_lat * item_lat).sum(axis=-1) / np.sqrt(config.latent_dim)
    return (config.base_logit
            + config.affinity_weight * dot
            + config.popularity_weight * item_pop_logit
            + _context_offset(context[0], context[1], config))


def _ctr_vector(catalog: Catalog, user: UserProfile, item_ids: np.ndarray,
                context: tuple[int, int]) -> np.ndarray:
    logits = _ctr_logits(user.latent_pref[None, :], catalog._item_latents[item_ids],
                         catalog._item_pop_logit[item_ids], context, catalog.config)
    return 1.0 / (1.0 + np.exp(-logits))


# --------------------------------------------------------------------------
# display policies
# --------------------------------------------------------------------------

def make_noisy_truth_proxy(catalog: Catalog, sigma: float, seed: int, source: str):
    """Stand-in production ranker: ground-truth CTR times a fixed per-subject
    lognormal misestimation factor.  The same subject keeps the same error
    across sessions, so the policy consistently over/under-serves it --
    the feedback structure a self-trained ranker produces.
    """
    n = len(catalog.ads) if source == "ad" else len(catalog.items)
    noise = np.exp(np.random.default_rng([seed, 202]).normal(0.0, sigma, size=n))

    def proxy(user: UserProfile, subject_ids: np.ndarray, context: tuple[int, int]) -> np.ndarray:
        item_ids = catalog.subject_item_ids(subject_ids, source)
        return _ctr_vector(catalog, user, item_ids, context) * noise[subject_ids]

    return proxy


def run_sessions(catalog: Catalog, policy: str, n_sessions: int, slots_per_session: int,
                 proxy_model, seed: int, source: str = "ad",
                 candidate_size: int = 50) -> ImpressionLog:
    """Simulate display sessions and return the labeled impression log.

    Each session samples a user, a context, and a candidate set (uniform
    without replacement from the ad pool or the item pool), ranks candidates
    by the policy -- ``ecpm``: proxy score x bid; ``pctr``: proxy score;
    ``uniform``: random permutation -- and displays the top slots.  Labels
    are seeded Bernoulli draws from the ground-truth click probability.
    The eCPM currency constant is dropped: ranking is invariant to positive
    scaling.  Sessions use per-session derived seeds, so generation is
    order-independent and parallelizable.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if source not in ("ad", "rec"):
        raise ValueError(f"unknown source {source!r}")
    pool = len(catalog.ads) if source == "ad" else len(catalog.items)
    if candidate_size > pool:
        raise ValueError(f"candidate_size {candidate_size} exceeds pool of {pool}")
    if candidate_size == 0:
        raise ValueError("empty candidate set")
    if slots_per_session >= candidate_size:
        raise ValueError("slots_per_session must be smaller than the candidate set")

    cfg = catalog.config
    records: list[ImpressionRecord] = []
    candidate_sets: dict[int, np.ndarray] = {}
    for s in range(n_sessions):
        rng = np.random.default_rng([seed, 303, s])
        user = catalog.users[int(rng.integers(0, cfg.n_users))]
        context = (int(rng.integers(0, cfg.n_time_buckets)),
                   int(rng.integers(0, cfg.n_devices)))
        cand = rng.choice(pool, size=candidate_size, replace=False)
        displayed = _rank_and_pick(catalog, policy, user, cand, context,
                                   proxy_model, slots_per_session, rng, source)
        item_ids = catalog.subject_item_ids(displayed, source)
        p = _ctr_vector(catalog, user, item_ids, context)
        labels = (rng.random(slots_per_session) < p).astype(np.int64)
        candidate_sets[s] = np.sort(cand)
        for subj, y in zip(displayed, labels):
            records.append(ImpressionRecord(s, user.user_id, int(subj),
                                            context[0], context[1], int(y), source))
    return ImpressionLog(records, candidate_sets, source, policy,
                         slots_per_session, candidate_size)


def _rank_and_pick(catalog, policy, user, cand, context, proxy_model, slots, rng, source):
    if policy == "uniform":
        order = rng.permutation(cand.size)
    else:
        scores = np.asarray(proxy_model(user, cand, context), dtype=np.float64)
        if scores.shape != cand.shape:
            raise ValueError("proxy model returned wrong-shaped scores")
        if policy == "ecpm":
            scores = scores * catalog._ad_bid[cand]
        # descending score, candidate id as the deterministic tie-break
        order = np.lexsort((cand, -scores))
    return cand[order[:slots]]


# --------------------------------------------------------------------------
# impression-ratio diagnostics
# --------------------------------------------------------------------------

def impression_ratio(log: ImpressionLog) -> dict[int, float]:
    """Per-subject display opportunity: sessions displayed / sessions as a
    candidate.  Subjects never entering any candidate set are absent."""
    if not log.candidate_sets:
        raise ValueError("log has no candidate sets recorded")
    candidacies: dict[int, int] = {}
    for cand in log.candidate_sets.values():
        for a in cand.tolist():
            candidacies[a] = candidacies.get(a, 0) + 1
    displays: dict[int, int] = {}
    seen: set[tuple[int, int]] = set()
    for rec in log.records:
        key = (rec.session_id, rec.subject_id)
        if key in seen:
            continue
        seen.add(key)
        displays[rec.subject_id] = displays.get(rec.subject_id, 0) + 1
    return {a: displays.get(a, 0) / n for a, n in sorted(candidacies.items())}


def ir_group_partition(ir: dict[int, float], n_groups: int) -> list[list[int]]:
    """Sort subjects by descending IR (ties by id) and split into equal
    groups, remainder going to the earlier groups."""
    if n_groups < 2:
        raise ValueError("need at least 2 groups")
    if len(ir) < n_groups:
        raise ValueError(f"fewer subjects ({len(ir)}) than groups ({n_groups})")
    ordered = sorted(ir, key=lambda a: (-ir[a], a))
    base, extra = divmod(len(ordered), n_groups)
    groups = []
    cursor = 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        groups.append(ordered[cursor:cursor + size])
        cursor += size
    return groups


def ir_group_means(ir: dict[int, float], n_groups: int) -> list[float]:
    return [float(np.mean([ir[a] for a in grp]))
            for grp in ir_group_partition(ir, n_groups)]


def rerank_flip_fraction(log: ImpressionLog, catalog: Catalog, proxy_model,
                         policy: str) -> float:
    """Replay the logged candidate sets under another ranking policy and
    report the fraction of sessions whose displayed set changes."""
    by_session: dict[int, set[int]] = {}
    ctx: dict[int, tuple[int, int, int]] = {}
    for rec in log.records:
        by_session.setdefault(rec.session_id, set()).add(rec.subject_id)
        ctx[rec.session_id] = (rec.user_id, rec.time_bucket, rec.device)
    changed = 0
    for sid, cand in log.candidate_sets.items():
        user_id, tb, dev = ctx[sid]
        rng = np.random.default_rng([0, 404, sid])   # only consulted by 'uniform'
        displayed = _rank_and_pick(catalog, policy, catalog.users[user_id], cand,
                                   (tb, dev), proxy_model, log.slots, rng, log.source)
        if set(int(x) for x in displayed) != by_session[sid]:
            changed += 1
    return changed / len(log.candidate_sets)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def write_catalog(catalog: Catalog, path: str | Path) -> None:
    """Single JSON file holding the config and all profile fields."""
    doc = {
        "schema": "ssblab-catalog-v1",
        "config": asdict(catalog.config),
        "users": [{"user_id": u.user_id,
                   "latent_pref": u.latent_pref.tolist(),
                   "age_bucket": u.age_bucket,
                   "gender_bucket": u.gender_bucket,
                   "behavior_seq": [list(p) for p in u.behavior_seq]}
                  for u in catalog.users],
        "items": [{"item_id": i.item_id, "category_id": i.category_id,
                   "brand_id": i.brand_id, "latent_attr": i.latent_attr.tolist(),
                   "popularity": i.popularity}
                  for i in catalog.items],
        "ads": [asdict(a) for a in catalog.ads],
    }
    Path(path).write_text(json.dumps(doc))


def read_catalog(path: str | Path) -> Catalog:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != "ssblab-catalog-v1":
        raise ValueError(f"not a catalog file: {path}")
    cfg = CatalogConfig(**doc["config"])
    users = [UserProfile(u["user_id"], np.array(u["latent_pref"]),
                         u["age_bucket"], u["gender_bucket"],
                         tuple((p[0], p[1]) for p in u["behavior_seq"]))
             for u in doc["users"]]
    items = [ItemProfile(i["item_id"], i["category_id"], i["brand_id"],
                         np.array(i["latent_attr"]), i["popularity"])
             for i in doc["items"]]
    ads = [AdProfile(**a) for a in doc["ads"]]
    return Catalog(cfg, users, items, ads)


def write_impression_log(log: ImpressionLog, path: str | Path,
                         candidates_path: str | Path) -> None:
    """Tab-separated records (columns per LOG_COLUMNS) plus a sidecar of
    candidate sets: session_id TAB comma-joined subject ids."""
    with open(path, "w") as fh:
        fh.write("#" + "\t".join(LOG_COLUMNS) + "\n")
        fh.write(f"#policy={log.policy}\tslots={log.slots}"
                 f"\tcandidate_size={log.candidate_size}\tsource={log.source}\n")
        for r in log.records:
            fh.write(f"{r.session_id}\t{r.source}\t{r.user_id}\t{r.subject_id}"
                     f"\t{r.time_bucket}\t{r.device}\t{r.label}\n")
    with open(candidates_path, "w") as fh:
        for sid in sorted(log.candidate_sets):
            ids = ",".join(str(int(x)) for x in log.candidate_sets[sid])
            fh.write(f"{sid}\t{ids}\n")


def read_impression_log(path: str | Path, candidates_path: str | Path) -> ImpressionLog:
    records = []
    meta = {"policy": "unknown", "slots": 0, "candidate_size": 0, "source": "ad"}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                if "=" in line:
                    for part in line[1:].split("\t"):
                        k, _, v = part.partition("=")
                        if k in meta:
                            meta[k] = int(v) if k in ("slots", "candidate_size") else v
                continue
            sid, source, uid, subj, tb, dev, y = line.split("\t")
            records.append(ImpressionRecord(int(sid), int(uid), int(subj),
                                            int(tb), int(dev), int(y), source))
    candidate_sets = {}
    with open(candidates_path) as fh:
        for line in fh:
            sid, ids = line.rstrip("\n").split("\t")
            candidate_sets[int(sid)] = np.array([int(x) for x in ids.split(",")],
                                                dtype=np.int64)
    return ImpressionLog(records, candidate_sets, meta["source"], meta["policy"],
                         int(meta["slots"]), int(meta["candidate_size"]))
