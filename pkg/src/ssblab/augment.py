"""Recommendation-log augmentation for ad CTR training.

Recommendation impressions are useful ad-training signal only when their
item carries at least one ad.  This module builds the item->ads index,
filters the rec log down to indexed items, rewrites each retained record
as a pseudo ad impression (picking uniformly among the item's K most
recently created ads, ignoring how often those ads were shown), and merges
the result with the feature-joined ad log into one shuffled training set.

All steps are pure and deterministic under (inputs, K, seed); the pseudo
mapping uses per-record derived seeds so a parallel map would produce the
same dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .marketplace import Catalog, ImpressionLog, ImpressionRecord

__all__ = [
    "ItemAdsIndex", "UnifiedSample",
    "build_item_ads_index", "retrieve_rec_samples", "map_pseudo_samples",
    "merge_training_set", "samples_from_ad_log",
    "write_unified", "read_unified",
]

UNIFIED_COLUMNS = ("source", "label", "user_id", "age_bucket", "gender_bucket",
                   "ad_id", "item_id", "category_id", "brand_id", "campaign_feature",
                   "time_bucket", "device", "behavior_seq")


@dataclass(frozen=True)
class ItemAdsIndex:
    """item_id -> ad ids ordered most recently created first."""
    entries: dict[int, list[int]]

    def __contains__(self, item_id: int) -> bool:
        return item_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class UnifiedSample:
    """Feature-id encoded training record in the shared ad input format.

    Rec-sourced samples carry the ad chosen by pseudo mapping, never a bare
    item; user_id is bookkeeping for evaluation, not a model feature.
    """
    source: str                             # 'ad' or 'rec'
    label: int
    user_id: int
    age_bucket: int
    gender_bucket: int
    ad_id: int
    item_id: int
    category_id: int
    brand_id: int
    campaign_feature: int
    time_bucket: int
    device: int
    behavior_seq: tuple[tuple[int, int], ...]


def build_item_ads_index(ads) -> ItemAdsIndex:
    """Keys are exactly the items with >= 1 ad; values sorted newest first,
    ties broken by ad_id."""
    entries: dict[int, list[tuple[int, int]]] = {}
    for ad in ads:
        entries.setdefault(ad.item_id, []).append((ad.creation_step, ad.ad_id))
    ordered = {item: [ad_id for _, ad_id in sorted(pairs, key=lambda p: (-p[0], p[1]))]
               for item, pairs in entries.items()}
    return ItemAdsIndex(ordered)


def retrieve_rec_samples(rec_log: ImpressionLog, index: ItemAdsIndex) -> list[ImpressionRecord]:
    """Keep rec records whose item has ads, in original order."""
    out = []
    for rec in rec_log.records:
        if rec.source != "rec":
            raise ValueError("retrieve_rec_samples expects a rec-sourced log")
        if rec.subject_id in index:
            out.append(rec)
    return out


def _sample_features(user, ad, item, record) -> UnifiedSample:
    return UnifiedSample(
        source=record.source, label=record.label, user_id=user.user_id,
        age_bucket=user.age_bucket, gender_bucket=user.gender_bucket,
        ad_id=ad.ad_id, item_id=item.item_id, category_id=item.category_id,
        brand_id=item.brand_id, campaign_feature=ad.campaign_feature,
        time_bucket=record.time_bucket, device=record.device,
        behavior_seq=user.behavior_seq)


def map_pseudo_samples(filtered: list[ImpressionRecord], index: ItemAdsIndex,
                       catalog: Catalog, k: int, seed: int) -> list[UnifiedSample]:
    """Rewrite retained rec records as pseudo ad samples.

    For each record, one ad is drawn uniformly among the min(K, available)
    most recent ads of the record's item -- recency only, display counts
    deliberately ignored.  The record keeps its own user, context, and
    label; only the subject is re-expressed in ad features.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = []
    for i, rec in enumerate(filtered):
        if rec.subject_id not in index:
            raise KeyError(f"record item {rec.subject_id} not in item-ads index")
        recent = index.entries[rec.subject_id][:k]
        if len(recent) == 1:
            ad_id = recent[0]
        else:
            pick = int(np.random.default_rng([seed, 71, i]).integers(0, len(recent)))
            ad_id = recent[pick]
        ad = catalog.ads[ad_id]
        out.append(_sample_features(catalog.users[rec.user_id], ad,
                                    catalog.items[ad.item_id], rec))
    return out


def samples_from_ad_log(ad_log: ImpressionLog, catalog: Catalog) -> list[UnifiedSample]:
    """Feature-join ad impressions against the catalog (order preserved)."""
    out = []
    for rec in ad_log.records:
        if rec.source != "ad":
            raise ValueError("expected an ad-sourced log")
        if rec.subject_id >= len(catalog.ads) or rec.user_id >= len(catalog.users):
            raise KeyError(f"dangling id in record {rec}")
        ad = catalog.ads[rec.subject_id]
        out.append(_sample_features(catalog.users[rec.user_id], ad,
                                    catalog.items[ad.item_id], rec))
    return out


def merge_training_set(ad_log: ImpressionLog, pseudo: list[UnifiedSample],
                       catalog: Catalog, seed: int) -> list[UnifiedSample]:
    """Concatenate joined ad samples with pseudo samples and shuffle once
    (seeded); training later consumes this stream as-is."""
    merged = samples_from_ad_log(ad_log, catalog) + list(pseudo)
    order = np.random.default_rng([seed, 72]).permutation(len(merged))
    return [merged[i] for i in order]


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def _behavior_str(seq) -> str:
    return ",".join(f"{i}:{c}" for i, c in seq) if seq else "-"


def _behavior_parse(text: str):
    if text == "-":
        return ()
    return tuple((int(i), int(c)) for i, c in
                 (pair.split(":") for pair in text.split(",")))


def write_unified(samples: list[UnifiedSample], path: str | Path) -> None:
    """Tab-separated, one sample per line, columns per UNIFIED_COLUMNS;
    behavior_seq is comma-joined item:category pairs ('-' when empty)."""
    with open(path, "w") as fh:
        fh.write("#" + "\t".join(UNIFIED_COLUMNS) + "\n")
        for s in samples:
            fh.write("\t".join([
                s.source, str(s.label), str(s.user_id), str(s.age_bucket),
                str(s.gender_bucket), str(s.ad_id), str(s.item_id),
                str(s.category_id), str(s.brand_id), str(s.campaign_feature),
                str(s.time_bucket), str(s.device), _behavior_str(s.behavior_seq),
            ]) + "\n")


def read_unified(path: str | Path) -> list[UnifiedSample]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            f = line.rstrip("\n").split("\t")
            out.append(UnifiedSample(
                source=f[0], label=int(f[1]), user_id=int(f[2]),
                age_bucket=int(f[3]), gender_bucket=int(f[4]), ad_id=int(f[5]),
                item_id=int(f[6]), category_id=int(f[7]), brand_id=int(f[8]),
                campaign_feature=int(f[9]), time_bucket=int(f[10]),
                device=int(f[11]), behavior_seq=_behavior_parse(f[12])))
    return out
