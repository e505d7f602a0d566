"""Augmentation: the item-ads index, retrieval filter, recent-K-random
pseudo mapping, the merge, and the unified-set file format."""

import numpy as np
import pytest
from scipy import stats as sstats

from ssblab import augment as aug
from ssblab import marketplace as mp


def make_catalog():
    cfg = mp.CatalogConfig(n_users=6, n_items=12, ad_coverage=0.5,
                           max_ads_per_item=3, latent_dim=4,
                           behavior_len_min=1, behavior_len_max=3,
                           n_categories=4, n_brands=4, n_campaigns=3)
    return mp.generate_catalog(cfg, seed=5)


def rec_record(session, user, item, label=1):
    return mp.ImpressionRecord(session, user, item, 0, 0, label, "rec")


class TestItemAdsIndex:
    def test_direct_construction_recent_first(self):
        ads = [mp.AdProfile(0, 0, 0, 1.0, 1),
               mp.AdProfile(1, 0, 0, 1.0, 9),
               mp.AdProfile(2, 5, 0, 1.0, 4)]
        index = aug.build_item_ads_index(ads)
        assert index.entries == {0: [1, 0], 5: [2]}

    def test_empty_ad_list(self):
        assert aug.build_item_ads_index([]).entries == {}

    def test_recency_tie_breaks_by_ad_id(self):
        ads = [mp.AdProfile(3, 0, 0, 1.0, 7), mp.AdProfile(1, 0, 0, 1.0, 7)]
        assert aug.build_item_ads_index(ads).entries == {0: [1, 3]}

    def test_keys_are_items_with_ads(self):
        catalog = make_catalog()
        index = aug.build_item_ads_index(catalog.ads)
        assert set(index.entries) == catalog.items_with_ads()
        for item, ad_ids in index.entries.items():
            assert ad_ids
            assert all(catalog.ads[a].item_id == item for a in ad_ids)


class TestRetrieve:
    def test_keeps_only_indexed_items_in_order(self):
        index = aug.ItemAdsIndex({1: [0], 3: [1]})
        log = mp.ImpressionLog([rec_record(0, 0, 1), rec_record(1, 0, 2),
                                rec_record(2, 0, 3), rec_record(3, 0, 4),
                                rec_record(4, 0, 1)], {}, "rec", "pctr", 1, 2)
        kept = aug.retrieve_rec_samples(log, index)
        assert [(r.session_id, r.subject_id) for r in kept] == [(0, 1), (2, 3), (4, 1)]

    def test_no_overlap_gives_empty(self):
        index = aug.ItemAdsIndex({9: [0]})
        log = mp.ImpressionLog([rec_record(0, 0, 1)], {}, "rec", "pctr", 1, 2)
        assert aug.retrieve_rec_samples(log, index) == []

    def test_full_index_is_identity_filter(self):
        index = aug.ItemAdsIndex({i: [0] for i in range(5)})
        log = mp.ImpressionLog([rec_record(s, 0, s % 5) for s in range(7)],
                               {}, "rec", "pctr", 1, 2)
        assert aug.retrieve_rec_samples(log, index) == log.records

    def test_ad_record_rejected(self):
        log = mp.ImpressionLog([mp.ImpressionRecord(0, 0, 1, 0, 0, 1, "ad")],
                               {}, "ad", "ecpm", 1, 2)
        with pytest.raises(ValueError, match="rec"):
            aug.retrieve_rec_samples(log, aug.ItemAdsIndex({1: [0]}))


class TestPseudoMapping:
    def _world_with_four_ads(self):
        """One item with ads [a9, a4, a2, a1] in recent-first order."""
        cfg = mp.CatalogConfig(n_users=2, n_items=2, ad_coverage=0.5, latent_dim=2,
                               behavior_len_min=0, behavior_len_max=2)
        users = [mp.UserProfile(0, np.zeros(2), 0, 0, ((0, 0),)),
                 mp.UserProfile(1, np.zeros(2), 1, 1, ())]
        items = [mp.ItemProfile(0, 0, 0, np.zeros(2), 1.0),
                 mp.ItemProfile(1, 1, 1, np.zeros(2), 1.0)]
        ads = {9: 40, 4: 30, 2: 20, 1: 10}      # ad_id -> creation_step
        ad_list = [mp.AdProfile(a, 0, 0, 1.0, step) for a, step in ads.items()]
        ad_list += [mp.AdProfile(0, 1, 1, 1.0, 1), mp.AdProfile(3, 1, 1, 1.0, 2),
                    mp.AdProfile(5, 1, 1, 1.0, 3), mp.AdProfile(6, 1, 1, 1.0, 4),
                    mp.AdProfile(7, 1, 1, 1.0, 5), mp.AdProfile(8, 1, 1, 1.0, 6)]
        ad_list.sort(key=lambda a: a.ad_id)
        catalog = mp.Catalog(cfg, users, items, ad_list)
        index = aug.build_item_ads_index(catalog.ads)
        assert index.entries[0] == [9, 4, 2, 1]
        return catalog, index

    def test_recent_k_random_uniform_over_top_k(self):
        catalog, index = self._world_with_four_ads()
        records = [rec_record(s, 0, 0) for s in range(10_000)]
        out = aug.map_pseudo_samples(records, index, catalog, k=3, seed=99)
        chosen = np.array([s.ad_id for s in out])
        assert set(chosen) == {9, 4, 2}          # a1 is beyond rank K
        counts = np.array([(chosen == a).sum() for a in (9, 4, 2)])
        _, p = sstats.chisquare(counts)
        assert p > 0.01

    def test_single_ad_is_deterministic(self):
        catalog, index = self._world_with_four_ads()
        index = aug.ItemAdsIndex({0: [9]})
        out = aug.map_pseudo_samples([rec_record(0, 0, 0)], index, catalog, 3, 0)
        assert out[0].ad_id == 9

    def test_k_one_always_most_recent(self):
        catalog, index = self._world_with_four_ads()
        records = [rec_record(s, 0, 0) for s in range(50)]
        out = aug.map_pseudo_samples(records, index, catalog, k=1, seed=7)
        assert all(s.ad_id == 9 for s in out)

    def test_labels_and_user_context_preserved(self):
        catalog, index = self._world_with_four_ads()
        records = [mp.ImpressionRecord(s, s % 2, 0, s % 3, s % 2, s % 2, "rec")
                   for s in range(40)]
        out = aug.map_pseudo_samples(records, index, catalog, k=3, seed=1)
        assert len(out) == len(records)
        for rec, sample in zip(records, out):
            assert sample.label == rec.label
            assert sample.user_id == rec.user_id
            assert sample.time_bucket == rec.time_bucket
            assert sample.device == rec.device
            assert sample.source == "rec"
            assert sample.item_id == 0

    def test_unindexed_item_raises(self):
        catalog, index = self._world_with_four_ads()
        with pytest.raises(KeyError):
            aug.map_pseudo_samples([rec_record(0, 0, 7)], index, catalog, 3, 0)

    def test_deterministic_under_seed(self):
        catalog, index = self._world_with_four_ads()
        records = [rec_record(s, 0, 0) for s in range(64)]
        a = aug.map_pseudo_samples(records, index, catalog, 3, 5)
        b = aug.map_pseudo_samples(records, index, catalog, 3, 5)
        assert a == b

    def test_ad_features_come_from_chosen_ad(self):
        catalog, index = self._world_with_four_ads()
        out = aug.map_pseudo_samples([rec_record(0, 1, 1)],
                                     aug.build_item_ads_index(catalog.ads),
                                     catalog, k=1, seed=0)
        s = out[0]
        ad = catalog.ads[s.ad_id]
        assert ad.item_id == 1
        assert s.campaign_feature == ad.campaign_feature
        assert s.category_id == catalog.items[1].category_id
        assert s.brand_id == catalog.items[1].brand_id


class TestMerge:
    def _ad_log(self, catalog, n):
        proxy = mp.make_noisy_truth_proxy(catalog, 0.4, 3, "ad")
        return mp.run_sessions(catalog, "ecpm", n, 2, proxy, 8,
                               source="ad", candidate_size=4)

    def test_counts_preserved(self):
        catalog = make_catalog()
        log = self._ad_log(catalog, 50)
        index = aug.build_item_ads_index(catalog.ads)
        rec_log = mp.run_sessions(catalog, "pctr",
                                  20, 2, mp.make_noisy_truth_proxy(catalog, 0.4, 4, "rec"),
                                  9, source="rec", candidate_size=4)
        pseudo = aug.map_pseudo_samples(
            aug.retrieve_rec_samples(rec_log, index), index, catalog, 3, 0)
        merged = aug.merge_training_set(log, pseudo, catalog, seed=2)
        assert len(merged) == len(log.records) + len(pseudo)
        assert sum(1 for s in merged if s.source == "ad") == len(log.records)

    def test_empty_pseudo_is_ads_only(self):
        catalog = make_catalog()
        log = self._ad_log(catalog, 30)
        merged = aug.merge_training_set(log, [], catalog, seed=2)
        assert len(merged) == len(log.records)
        assert all(s.source == "ad" for s in merged)

    def test_same_seed_same_order(self):
        catalog = make_catalog()
        log = self._ad_log(catalog, 30)
        a = aug.merge_training_set(log, [], catalog, seed=2)
        b = aug.merge_training_set(log, [], catalog, seed=2)
        assert a == b

    def test_shuffle_actually_shuffles(self):
        catalog = make_catalog()
        log = self._ad_log(catalog, 40)
        merged = aug.merge_training_set(log, [], catalog, seed=2)
        joined = aug.samples_from_ad_log(log, catalog)
        assert merged != joined and sorted(map(repr, merged)) == sorted(map(repr, joined))

    def test_dangling_ad_id_raises(self):
        catalog = make_catalog()
        bad = mp.ImpressionLog([mp.ImpressionRecord(0, 0, 10_000, 0, 0, 1, "ad")],
                               {}, "ad", "ecpm", 1, 2)
        with pytest.raises(KeyError):
            aug.merge_training_set(bad, [], catalog, seed=0)


class TestUnifiedFile:
    def test_round_trip(self, tmp_path):
        catalog = make_catalog()
        proxy = mp.make_noisy_truth_proxy(catalog, 0.4, 3, "ad")
        log = mp.run_sessions(catalog, "ecpm", 25, 2, proxy, 8,
                              source="ad", candidate_size=4)
        samples = aug.merge_training_set(log, [], catalog, seed=1)
        aug.write_unified(samples, tmp_path / "u.tsv")
        assert aug.read_unified(tmp_path / "u.tsv") == samples

    def test_header_matches_documented_columns(self, tmp_path):
        catalog = make_catalog()
        log = mp.ImpressionLog([mp.ImpressionRecord(0, 0, 0, 1, 2, 1, "ad")],
                               {}, "ad", "ecpm", 1, 2)
        samples = aug.merge_training_set(log, [], catalog, seed=1)
        aug.write_unified(samples, tmp_path / "u.tsv")
        first = (tmp_path / "u.tsv").read_text().splitlines()[0]
        assert first == "#" + "\t".join(aug.UNIFIED_COLUMNS)

    def test_empty_behavior_seq_round_trips(self, tmp_path):
        s = aug.UnifiedSample("rec", 0, 1, 2, 0, 3, 4, 1, 2, 0, 5, 1, ())
        aug.write_unified([s], tmp_path / "u.tsv")
        assert aug.read_unified(tmp_path / "u.tsv") == [s]
