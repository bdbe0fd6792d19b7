import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from metakrec.dataset import (
    DataError,
    EmptyDatasetError,
    InteractionDataset,
    KnowledgeGraph,
    ParseError,
    load_interactions,
    load_kg_triples,
    load_split,
    make_cold_start_train,
    save_split,
    split_dataset,
    ten_core_filter,
)

from helpers import make_ds

pairs_strategy = st.sets(st.tuples(st.integers(0, 14), st.integers(0, 19)), min_size=1, max_size=150)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadInteractions:
    def test_threshold_keeps_positive_rows(self, tmp_path):
        ds = load_interactions(write(tmp_path, "x.txt", "u1 i1 1\nu1 i2 1\nu2 i1 0\n"), positive_threshold=1)
        assert len(ds.train) == 2
        assert (ds.num_users, ds.num_items) == (2, 2)

    def test_default_keeps_label_one_only(self, tmp_path):
        ds = load_interactions(write(tmp_path, "x.txt", "a x 1\na y 2\nb x 0\n"))
        assert ds.train == {(0, 0)}

    def test_no_label_column_means_all_positive(self, tmp_path):
        ds = load_interactions(write(tmp_path, "x.txt", "u1 i1\nu1 i2\nu2 i1\n"))
        assert len(ds.train) == 3

    def test_duplicates_collapse(self, tmp_path):
        ds = load_interactions(write(tmp_path, "x.txt", "u1 i1 1\nu1 i1 1\n"))
        assert len(ds.train) == 1

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        ds = load_interactions(write(tmp_path, "x.txt", "# header\n\nu1 i1\n"))
        assert ds.user_ids == ("u1",) and ds.item_ids == ("i1",)

    def test_malformed_line_reports_line_number(self, tmp_path):
        with pytest.raises(ParseError) as err:
            load_interactions(write(tmp_path, "x.txt", "u1 i1\nu1 i2 1 extra\n"))
        assert err.value.lineno == 2
        assert ":2:" in str(err.value)

    def test_non_numeric_label(self, tmp_path):
        with pytest.raises(ParseError):
            load_interactions(write(tmp_path, "x.txt", "u1 i1 yes\n"))

    def test_empty_result(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            load_interactions(write(tmp_path, "x.txt", "u1 i1 0\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_interactions(tmp_path / "nope.txt")

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=30))
    def test_idempotent_under_duplicate_rows(self, rows):
        import tempfile
        from pathlib import Path

        text = "".join(f"u{u} i{i}\n" for u, i in rows)
        with tempfile.TemporaryDirectory() as tmp:
            once = load_interactions(write(Path(tmp), "a.txt", text))
            twice = load_interactions(write(Path(tmp), "b.txt", text + text))
        assert once == twice


class TestLoadKG:
    def test_counts(self, tmp_path):
        kg = load_kg_triples(write(tmp_path, "kg.txt", "a r b\nb r c\n"))
        assert (kg.num_entities, kg.num_relations, len(kg.triples)) == (3, 1, 2)

    def test_empty_file_is_valid(self, tmp_path):
        kg = load_kg_triples(write(tmp_path, "kg.txt", ""))
        assert kg.is_empty and kg.num_entities == 0

    def test_duplicate_triple_stored_once(self, tmp_path):
        kg = load_kg_triples(write(tmp_path, "kg.txt", "a r b\na r b\n"))
        assert len(kg.triples) == 1

    def test_alignment_by_shared_id(self, tmp_path):
        kg = load_kg_triples(write(tmp_path, "kg.txt", "i2 r e\ni0 r e\n"), item_ids=("i0", "i1", "i2"))
        assert kg.item_alignment == {0: kg.entity_ids.index("i0"), 2: kg.entity_ids.index("i2")}

    def test_alignment_file(self, tmp_path):
        kg = load_kg_triples(
            write(tmp_path, "kg.txt", "m.1 r e\n"), item_ids=("i0",), alignment_path=write(tmp_path, "map.txt", "i0 m.1\n")
        )
        assert kg.item_alignment == {0: 0}

    def test_malformed(self, tmp_path):
        with pytest.raises(ParseError):
            load_kg_triples(write(tmp_path, "kg.txt", "a r\n"))

    def test_rejects_out_of_range_and_non_injective(self):
        with pytest.raises(DataError):
            KnowledgeGraph(2, 1, np.array([[0, 0, 2]]))
        with pytest.raises(DataError):
            KnowledgeGraph(2, 1, np.array([[0, 0, 1]]), {0: 1, 1: 1})


class TestTenCore:
    def test_unchanged_when_already_dense(self):
        pairs = {(u, i) for u in range(10) for i in range(10)}
        out = ten_core_filter(make_ds(pairs))
        assert out.train == frozenset(pairs)

    def test_single_sparse_user_empties(self):
        with pytest.raises(EmptyDatasetError):
            ten_core_filter(make_ds({(0, i) for i in range(9)}))

    def test_chain_removal(self):
        # user 10 holds 9 core items plus item 10, which nobody else has.
        # item 10 goes first (degree 1), which leaves user 10 with 9 and removes it too.
        core = {(u, i) for u in range(10) for i in range(10)}
        extra = {(10, i) for i in range(9)} | {(10, 10)}
        out = ten_core_filter(make_ds(core | extra))
        assert (out.num_users, out.num_items) == (10, 10)
        assert out.train == frozenset(core)

    def test_remap_keeps_external_ids(self):
        ds = InteractionDataset(
            12, 10, frozenset({(u, i) for u in range(2, 12) for i in range(10)} | {(0, 0)}),
            user_ids=tuple(f"u{n}" for n in range(12)), item_ids=tuple(f"i{n}" for n in range(10)),
        )
        out = ten_core_filter(ds)
        assert out.user_ids == tuple(f"u{n}" for n in range(2, 12))

    @given(pairs_strategy, st.integers(1, 4))
    def test_min_degree_after_filter(self, pairs, k):
        try:
            out = ten_core_filter(make_ds(pairs), k=k)
        except EmptyDatasetError:
            return
        arr = out.train_array()
        assert np.bincount(arr[:, 0]).min() >= k
        assert np.bincount(arr[:, 1]).min() >= k
        assert arr[:, 0].max() + 1 == out.num_users and arr[:, 1].max() + 1 == out.num_items


class TestSplit:
    def test_exact_ratio_counts(self):
        ds = make_ds({(u, i) for u in range(10) for i in range(10)})
        out = split_dataset(ds, seed=1)
        assert (len(out.train), len(out.valid), len(out.test)) == (80, 10, 10)

    def test_ten_interactions(self):
        out = split_dataset(make_ds({(0, i) for i in range(10)}), seed=3)
        assert (len(out.train), len(out.valid), len(out.test)) == (8, 1, 1)

    def test_deterministic(self):
        ds = make_ds({(u, i) for u in range(7) for i in range(9)})
        assert split_dataset(ds, seed=5) == split_dataset(ds, seed=5)
        assert split_dataset(ds, seed=5) != split_dataset(ds, seed=6)

    def test_bad_ratios(self):
        with pytest.raises(DataError):
            split_dataset(make_ds({(0, 0)}), ratios=(0.8, 0.1, 0.2))

    @given(pairs_strategy, st.integers(0, 2**31))
    def test_partition(self, pairs, seed):
        out = split_dataset(make_ds(pairs), seed=seed)
        assert out.train | out.valid | out.test == frozenset(pairs)
        assert not (out.train & out.valid or out.train & out.test or out.valid & out.test)


class TestColdStart:
    def test_examples(self):
        train = {(u, 0) for u in range(5)} | {(2, 1)}
        ds = make_ds(train, num_items=3, test={(0, 2)})
        out = make_cold_start_train(ds, seed=0)
        assert sum(1 for _, i in out.train if i == 0) == 1
        assert (2, 1) in out.train
        assert len(out.train) == 2  # items with >= 1 training interaction
        assert out.test == ds.test and out.valid == ds.valid

    @given(pairs_strategy, st.integers(0, 1000))
    def test_degree_and_subset(self, pairs, seed):
        ds = split_dataset(make_ds(pairs), seed=0)
        out = make_cold_start_train(ds, seed=seed)
        deg = np.bincount(out.train_array()[:, 1], minlength=ds.num_items) if out.train else np.zeros(ds.num_items)
        assert set(np.unique(deg).tolist()) <= {0, 1}
        assert out.train <= ds.train
        assert len(out.train) == len({i for _, i in ds.train})

    def test_uniform_choice(self):
        ds = make_ds({(u, 0) for u in range(4)})
        counts = np.zeros(4)
        for seed in range(2000):
            (u, _), = make_cold_start_train(ds, seed=seed).train
            counts[u] += 1
        assert counts.min() > 400


class TestManifest:
    def test_round_trip_and_hash_check(self, tmp_path):
        ds = split_dataset(load_interactions(write(tmp_path, "x.txt", "".join(f"u{n % 7} i{n % 11}\n" for n in range(60)))), seed=2)
        manifest = save_split(ds, tmp_path / "prep", {"seed": 2})
        back, m2 = load_split(tmp_path / "prep")
        assert back == ds and m2 == manifest
        assert json.loads((tmp_path / "prep" / "manifest.json").read_text())["seed"] == 2
        (tmp_path / "prep" / "test.txt").write_text("0\t0\n")
        with pytest.raises(DataError, match="hash"):
            load_split(tmp_path / "prep")
