import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoipred.tensors import (
    CooFormatError,
    SparseTensor,
    TensorShape,
    load_coo,
    merge,
    save_coo,
    split,
    synth_planted,
)

from helpers import random_sparse_tensor


def make(shape_dims, rows):
    return SparseTensor(
        TensorShape(tuple(shape_dims)), np.asarray(rows, dtype=np.int64)
    )


class TestTensorShape:
    def test_rejects_low_order(self):
        with pytest.raises(ValueError):
            TensorShape((5,))

    def test_rejects_empty_dimension(self):
        with pytest.raises(ValueError):
            TensorShape((3, 0))

    def test_node_layout(self):
        shape = TensorShape((3, 4, 2))
        assert shape.order == 3
        assert shape.total_cells == 24
        assert shape.n_nodes == 9
        assert shape.node_offsets == (0, 3, 7)

    def test_encode_decode_roundtrip(self):
        shape = TensorShape((3, 4, 2))
        entries = np.array([[0, 0, 0], [2, 3, 1], [1, 2, 0]])
        lin = shape.encode(entries)
        # row-major: ((i0 * 4) + i1) * 2 + i2
        assert lin.tolist() == [0, 23, 12]
        assert (shape.decode(lin) == entries).all()

    def test_encode_rejects_huge_shape(self):
        shape = TensorShape((2**31, 2**31, 2**31))
        with pytest.raises(ValueError):
            shape.encode(np.array([[0, 0, 0]]))

    @given(st.data())
    @settings(max_examples=50, deadline=None)
    def test_encode_is_bijective(self, data):
        order = data.draw(st.integers(2, 4))
        dims = tuple(data.draw(st.integers(1, 9)) for _ in range(order))
        shape = TensorShape(dims)
        all_cells = np.indices(dims).reshape(order, -1).T
        lin = shape.encode(all_cells)
        assert len(np.unique(lin)) == shape.total_cells
        assert lin.min() == 0 and lin.max() == shape.total_cells - 1
        assert (shape.decode(lin) == all_cells).all()


class TestSparseTensor:
    def test_rejects_out_of_bounds(self):
        with pytest.raises(ValueError):
            make((2, 2), [[0, 2]])

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            make((2, 2), [[-1, 0]])

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            make((2, 2), [[0, 1], [0, 1]])

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            make((2, 2, 2), [[0, 1]])

    def test_entries_read_only(self):
        t = make((2, 2), [[0, 1]])
        with pytest.raises(ValueError):
            t.entries[0, 0] = 1

    def test_membership_matches_linear_scan(self):
        rng = np.random.default_rng(11)
        t = random_sparse_tensor(rng)
        stored = {tuple(r) for r in t.entries.tolist()}
        all_cells = np.indices(t.shape.dims).reshape(t.shape.order, -1).T
        mask = t.contains(all_cells)
        for cell, hit in zip(all_cells.tolist(), mask.tolist()):
            assert hit == (tuple(cell) in stored)
        assert ((0,) * t.shape.order in t) == ((0,) * t.shape.order in stored)


class TestLoadSave:
    def test_plain_file(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("0 0 1\n1 2 0\n")
        t = load_coo(p)
        assert t.shape.dims == (2, 3, 2)
        assert len(t) == 2

    def test_shape_header(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# shape 4 4 4\n0 0 1\n")
        t = load_coo(p)
        assert t.shape.dims == (4, 4, 4)

    def test_one_based_rebase(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("1 1\n3 2\n")
        t = load_coo(p, index_base=1)
        assert (t.entries == [[0, 0], [2, 1]]).all()

    def test_zero_index_under_base_one_fails(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("0 1\n")
        with pytest.raises(CooFormatError):
            load_coo(p, index_base=1)

    def test_trailing_fields_ignored(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# shape 2 2\n0 1 4.5 extra\n1 0 3.0 extra\n")
        t = load_coo(p)
        assert len(t) == 2

    def test_error_carries_line_number(self, tmp_path):
        p = tmp_path / "bad.coo"
        p.write_text("0 0\n0 x\n")
        with pytest.raises(CooFormatError, match=r"bad\.coo:2"):
            load_coo(p)

    def test_too_few_fields(self, tmp_path):
        p = tmp_path / "bad.coo"
        p.write_text("0 0 0\n1 1\n")
        with pytest.raises(CooFormatError, match=":2"):
            load_coo(p)

    def test_header_conflict(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# shape 2 2\n0 0\n")
        with pytest.raises(CooFormatError, match="conflicts"):
            load_coo(p, declared_shape=TensorShape((3, 3)))

    def test_out_of_bounds_against_header(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# shape 2 2\n0 5\n")
        with pytest.raises(CooFormatError, match="dimension 1"):
            load_coo(p)

    def test_empty_needs_shape(self, tmp_path):
        p = tmp_path / "a.coo"
        p.write_text("# a comment\n")
        with pytest.raises(CooFormatError):
            load_coo(p)
        p.write_text("# shape 2 2\n")
        assert len(load_coo(p)) == 0

    def test_duplicates_merged_and_logged(self, tmp_path, caplog):
        p = tmp_path / "a.coo"
        p.write_text("0 1\n0 1\n1 0\n")
        with caplog.at_level(logging.INFO):
            t = load_coo(p)
        assert len(t) == 2
        assert any("1 duplicate" in r.getMessage() for r in caplog.records)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_coo(tmp_path / "nope.coo")

    def test_save_load_roundtrip_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        t = random_sparse_tensor(rng)
        p1, p2 = tmp_path / "a.coo", tmp_path / "b.coo"
        save_coo(t, p1)
        t2 = load_coo(p1)
        assert t2.shape == t.shape
        assert (t2.linear_sorted == t.linear_sorted).all()
        save_coo(t2, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestMergeSplit:
    def test_merge_unions(self):
        a = make((2, 2), [[0, 0], [0, 1]])
        b = make((2, 2), [[0, 1], [1, 1]])
        m = merge([a, b])
        assert len(m) == 3

    def test_merge_shape_mismatch(self):
        with pytest.raises(ValueError):
            merge([make((2, 2), [[0, 0]]), make((2, 3), [[0, 0]])])

    def test_split_sizes_small(self):
        t = make((5, 2), [[i, j] for i in range(5) for j in range(2)])
        ds = split(t, (0.7, 0.1, 0.2), seed=0)
        assert (len(ds.train), len(ds.valid), len(ds.test)) == (7, 1, 2)

    def test_split_sizes_large(self):
        shape = TensorShape((100, 100, 10))
        lin = np.arange(100000, dtype=np.int64)
        t = SparseTensor(shape, shape.decode(lin))
        ds = split(t, (0.7, 0.1, 0.2), seed=1)
        assert (len(ds.train), len(ds.valid), len(ds.test)) == (70000, 10000, 20000)

    def test_split_deterministic(self):
        rng = np.random.default_rng(5)
        t = random_sparse_tensor(rng, max_entries=25)
        a = split(t, (0.7, 0.1, 0.2), seed=9)
        b = split(t, (0.7, 0.1, 0.2), seed=9)
        assert (a.train.linear_sorted == b.train.linear_sorted).all()
        assert (a.test.linear_sorted == b.test.linear_sorted).all()

    def test_split_bad_ratios(self):
        t = make((2, 2), [[0, 0], [1, 1]])
        with pytest.raises(ValueError):
            split(t, (0.5, 0.5, 0.5), seed=0)
        with pytest.raises(ValueError):
            split(t, (1.0, 0.0, 0.0), seed=0)

    @given(st.integers(0, 2**32 - 1), st.integers(3, 60))
    @settings(max_examples=60, deadline=None)
    def test_split_partitions(self, seed, n):
        shape = TensorShape((8, 8, 8))
        rng = np.random.default_rng(n * 7919 + 13)
        lin = np.sort(rng.choice(512, size=n, replace=False)).astype(np.int64)
        t = SparseTensor(shape, shape.decode(lin))
        ds = split(t, (0.7, 0.1, 0.2), seed=seed)
        parts = [ds.train.linear_sorted, ds.valid.linear_sorted, ds.test.linear_sorted]
        rebuilt = np.concatenate(parts)
        assert len(rebuilt) == n
        assert (np.sort(rebuilt) == lin).all()  # disjoint and exhaustive


class TestSynthPlanted:
    def test_counts_and_disjointness(self):
        shape = TensorShape((20, 20, 20))
        obs, hold = synth_planted(shape, rank=3, n_obs=400, noise_frac=0.1, seed=4)
        assert len(obs) == 400
        assert np.intersect1d(obs.linear_sorted, hold.linear_sorted).size == 0

    def test_matches_documented_procedure(self):
        # Replays the documented generation recipe, scoring cells with
        # explicit loops instead of einsum, and checks set relations.
        shape = TensorShape((6, 5, 4))
        rank, n_obs, noise = 2, 25, 0.2
        seed = 17
        obs, hold = synth_planted(shape, rank, n_obs, noise, seed)

        rng = np.random.default_rng(seed)
        factors = [rng.uniform(0.0, 1.0, size=(d, rank)) for d in shape.dims]
        scores = np.zeros(shape.dims)
        for a in range(6):
            for b in range(5):
                for c in range(4):
                    scores[a, b, c] = sum(
                        factors[0][a, z] * factors[1][b, z] * factors[2][c, z]
                        for z in range(rank)
                    )
        true_lin = np.argsort(-scores.ravel(), kind="stable")[:n_obs]
        true = set(true_lin.tolist())
        n_clean = n_obs - int(round(noise * n_obs))
        clean = set(rng.choice(true_lin, size=n_clean, replace=False).tolist())

        obs_set = set(obs.linear_sorted.tolist())
        hold_set = set(hold.linear_sorted.tolist())
        assert len(obs_set) == n_obs
        assert clean <= obs_set  # the clean draw survives verbatim
        assert hold_set <= true
        assert hold_set.isdisjoint(obs_set)
        assert true - obs_set == hold_set

    def test_zero_noise_covers_true_set(self):
        shape = TensorShape((8, 8, 8))
        obs, hold = synth_planted(shape, rank=2, n_obs=50, noise_frac=0.0, seed=1)
        assert len(obs) == 50
        assert len(hold) == 0

    def test_deterministic(self):
        shape = TensorShape((10, 10, 10))
        a = synth_planted(shape, 3, 100, 0.25, seed=42)
        b = synth_planted(shape, 3, 100, 0.25, seed=42)
        assert (a[0].linear_sorted == b[0].linear_sorted).all()
        assert (a[1].linear_sorted == b[1].linear_sorted).all()

    def test_argument_validation(self):
        shape = TensorShape((4, 4))
        with pytest.raises(ValueError):
            synth_planted(shape, 0, 4, 0.0, 0)
        with pytest.raises(ValueError):
            synth_planted(shape, 1, 16, 0.0, 0)
        with pytest.raises(ValueError):
            synth_planted(shape, 1, 4, 1.5, 0)
