import numpy as np
import pytest

from hoipred.graph import build_incidence, clique_expand, normalize_adjacency
from hoipred.propagation import (
    FUSION_KINDS,
    EmbeddingTable,
    FusionOperator,
    VariantFlags,
    fuse,
    fuse_backward,
    gather_rows,
    gather_stacked,
    init_embeddings,
    init_transforms,
    propagate,
    propagate_backward,
    scatter_rows,
    scatter_stacked,
    stacked_view,
)
from hoipred.tensors import SparseTensor, TensorShape

from helpers import max_rel_err, random_sparse_tensor


def norm_adj(tensor):
    return normalize_adjacency(clique_expand(build_incidence(tensor), tensor.shape))


def golden():
    t = SparseTensor(
        TensorShape((2, 2, 2)), np.array([[0, 0, 0], [1, 1, 0], [0, 1, 1]])
    )
    return t, norm_adj(t)


class TestPropagate:
    def test_single_clique_averages_neighbors(self):
        # one interaction makes a 3-node triangle; every degree is 2, so
        # each layer-1 row is the mean of the other two layer-0 rows
        t = SparseTensor(TensorShape((1, 1, 1)), np.array([[0, 0, 0]]))
        adj = norm_adj(t)
        f0 = np.array([[2.0, 0.0], [0.0, 4.0], [6.0, 2.0]])
        stack = propagate(f0, adj, n_layers=1)
        want = np.array([[3.0, 3.0], [4.0, 1.0], [1.0, 2.0]])
        assert np.allclose(stack.layers[1], want)

    def test_matches_dense_oracle(self):
        t, adj = golden()
        rng = np.random.default_rng(0)
        f0 = rng.standard_normal((6, 3))
        s = adj.matrix.to_dense()
        stack = propagate(f0, adj, n_layers=2)
        assert np.allclose(stack.layers[1], s @ f0)
        assert np.allclose(stack.layers[2], s @ (s @ f0))

    def test_zero_layers_returns_input(self):
        _, adj = golden()
        f0 = np.random.default_rng(1).standard_normal((6, 2))
        stack = propagate(f0, adj, n_layers=0)
        assert stack.n_layers == 0
        assert (stack.layers[0] == f0).all()

    def test_linearity_with_flags_off(self):
        _, adj = golden()
        rng = np.random.default_rng(2)
        f, g = rng.standard_normal((2, 6, 4))
        combo = propagate(2.5 * f - 1.5 * g, adj, n_layers=2).layers[2]
        sep = (
            2.5 * propagate(f, adj, n_layers=2).layers[2]
            - 1.5 * propagate(g, adj, n_layers=2).layers[2]
        )
        assert np.allclose(combo, sep)

    def test_permutation_equivariance(self):
        # relabeling the entities of dimension 0 permutes feature rows
        rng = np.random.default_rng(3)
        t = random_sparse_tensor(rng, order=3, max_dim=5, max_entries=12)
        d0 = t.shape.dims[0]
        perm = rng.permutation(d0)
        entries = t.entries.copy()
        entries[:, 0] = perm[entries[:, 0]]
        t2 = SparseTensor(t.shape, entries)

        f0 = rng.standard_normal((t.shape.n_nodes, 3))
        node_perm = np.arange(t.shape.n_nodes)
        node_perm[:d0] = perm
        f0_perm = np.empty_like(f0)
        f0_perm[node_perm] = f0

        out = propagate(f0, norm_adj(t), n_layers=2).layers[2]
        out_perm = propagate(f0_perm, norm_adj(t2), n_layers=2).layers[2]
        assert np.allclose(out_perm[node_perm], out)

    def test_flag_combinations_change_output(self):
        _, adj = golden()
        rng = np.random.default_rng(4)
        f0 = rng.standard_normal((6, 3))
        w = init_transforms(3, 2, seed=5)
        plain = propagate(f0, adj, 2).layers[2]
        transformed = propagate(
            f0, adj, 2, VariantFlags(feature_transform=True), w
        ).layers[2]
        rectified = propagate(f0, adj, 2, VariantFlags(nonlinearity=True)).layers[2]
        assert not np.allclose(plain, transformed)
        assert (rectified >= 0).all()
        assert np.allclose(rectified, np.maximum(0, adj.matrix.to_dense() @ np.maximum(0, adj.matrix.to_dense() @ f0)))

    def test_validation(self):
        _, adj = golden()
        f0 = np.zeros((6, 2))
        with pytest.raises(ValueError):
            propagate(f0, adj, -1)
        with pytest.raises(ValueError):
            propagate(f0, adj, 1, VariantFlags(feature_transform=True))
        with pytest.raises(ValueError):
            propagate(np.zeros((5, 2)), adj, 1)


class TestPropagateBackward:
    @pytest.mark.parametrize("ft", [False, True])
    @pytest.mark.parametrize("nl", [False, True])
    def test_matches_finite_differences(self, ft, nl):
        _, adj = golden()
        rng = np.random.default_rng(6)
        r, L = 3, 2
        f0 = rng.standard_normal((6, r))
        flags = VariantFlags(feature_transform=ft, nonlinearity=nl)
        transforms = init_transforms(r, L, seed=7) if ft else None
        weights = [rng.standard_normal((6, r)) for _ in range(L + 1)]

        def loss_of(f):
            stack = propagate(f, adj, L, flags, transforms)
            return sum(float((w * lay).sum()) for w, lay in zip(weights, stack.layers))

        stack = propagate(f0, adj, L, flags, transforms)
        d_f0, d_w = propagate_backward(adj, weights, stack)

        h = 1e-6
        fd = np.zeros_like(f0)
        for i in range(f0.shape[0]):
            for j in range(r):
                fp = f0.copy()
                fp[i, j] += h
                fm = f0.copy()
                fm[i, j] -= h
                fd[i, j] = (loss_of(fp) - loss_of(fm)) / (2 * h)
        assert max_rel_err(d_f0, fd, floor=1e-4) < 1e-5

        if ft:
            for l in range(L):
                fd_w = np.zeros_like(transforms[l])
                for i in range(r):
                    for j in range(r):
                        wp = [m.copy() for m in transforms]
                        wp[l][i, j] += h
                        wm = [m.copy() for m in transforms]
                        wm[l][i, j] -= h
                        sp = propagate(f0, adj, L, flags, wp)
                        sm = propagate(f0, adj, L, flags, wm)
                        lp = sum(
                            float((w * lay).sum())
                            for w, lay in zip(weights, sp.layers)
                        )
                        lm = sum(
                            float((w * lay).sum())
                            for w, lay in zip(weights, sm.layers)
                        )
                        fd_w[i, j] = (lp - lm) / (2 * h)
                assert max_rel_err(d_w[l], fd_w, floor=1e-4) < 1e-5
        else:
            assert d_w is None


class TestFuse:
    def test_all_kinds_identical_at_zero_layers(self):
        _, adj = golden()
        f0 = np.random.default_rng(8).standard_normal((6, 4))
        stack = propagate(f0, adj, 0)
        outs = [fuse(stack, FusionOperator(k)) for k in FUSION_KINDS]
        for out in outs[1:]:
            assert (out == outs[0]).all()
        assert (outs[0] == f0).all()

    def test_fuse_output_is_a_copy(self):
        _, adj = golden()
        f0 = np.zeros((6, 2))
        stack = propagate(f0, adj, 0)
        out = fuse(stack, FusionOperator("sum"))
        out += 1.0
        assert (stack.layers[0] == 0).all()

    def test_hand_math_one_layer(self):
        _, adj = golden()
        rng = np.random.default_rng(9)
        f0 = rng.standard_normal((6, 2))
        stack = propagate(f0, adj, 1)
        f1 = stack.layers[1]
        assert np.allclose(fuse(stack, FusionOperator("sum")), f0 + f1)
        assert np.allclose(fuse(stack, FusionOperator("mean")), (f0 + f1) / 2)
        assert np.allclose(fuse(stack, FusionOperator("product")), f0 * f1)
        cat = fuse(stack, FusionOperator("concat"))
        assert cat.shape == (6, 4)
        assert (cat[:, :2] == f0).all() and np.allclose(cat[:, 2:], f1)

    def test_width(self):
        op = FusionOperator("concat")
        assert op.width(5, 3) == 20
        assert FusionOperator("sum").width(5, 3) == 5
        with pytest.raises(ValueError):
            FusionOperator("max")

    @pytest.mark.parametrize("kind", FUSION_KINDS)
    def test_backward_matches_finite_differences(self, kind):
        _, adj = golden()
        rng = np.random.default_rng(10)
        f0 = rng.standard_normal((6, 3))
        stack = propagate(f0, adj, 2)
        op = FusionOperator(kind)
        w = rng.standard_normal(fuse(stack, op).shape)

        d_layers = fuse_backward(stack, op, w)
        h = 1e-6
        for l in range(3):
            fd = np.zeros_like(stack.layers[l])
            for i in range(6):
                for j in range(3):
                    orig = stack.layers[l][i, j]
                    stack.layers[l][i, j] = orig + h
                    fp = float((w * fuse(stack, op)).sum())
                    stack.layers[l][i, j] = orig - h
                    fm = float((w * fuse(stack, op)).sum())
                    stack.layers[l][i, j] = orig
                    fd[i, j] = (fp - fm) / (2 * h)
            assert max_rel_err(d_layers[l], fd, floor=1e-4) < 1e-5


class TestGatherScatter:
    def test_gather_rows_golden(self):
        # interaction (1, 0, 1) in a 2x2x2 tensor touches global rows 1, 2, 5
        features = np.arange(12.0).reshape(6, 2)
        rows = gather_rows(features, np.array([[1, 0, 1]]), (0, 2, 4))
        assert rows.shape == (1, 3, 2)
        assert (rows[0] == features[[1, 2, 5]]).all()

    def test_gather_rows_copies(self):
        features = np.zeros((6, 2))
        rows = gather_rows(features, np.array([[0, 0, 0]]), (0, 2, 4))
        rows += 5.0
        assert (features == 0).all()

    def test_gather_bounds_check(self):
        with pytest.raises(IndexError):
            gather_rows(np.zeros((4, 2)), np.array([[1, 1, 1]]), (0, 2, 4))
        with pytest.raises(ValueError):
            gather_rows(np.zeros((6, 2)), np.array([[1, 1]]), (0, 2, 4))

    def test_scatter_rows_is_gather_adjoint(self):
        rng = np.random.default_rng(11)
        features = rng.standard_normal((9, 3))
        inter = np.array([[0, 1, 2], [2, 0, 0], [0, 1, 2]])
        offsets = (0, 3, 6)
        d_rows = rng.standard_normal((3, 3, 3))
        d_feat = np.zeros_like(features)
        scatter_rows(d_feat, inter, offsets, d_rows)
        lhs = float((gather_rows(features, inter, offsets) * d_rows).sum())
        rhs = float((features * d_feat).sum())
        assert abs(lhs - rhs) < 1e-10

    def test_gather_stacked_layout(self):
        # entity-major, layer-minor: block n holds layers 0..L of entity n
        _, adj = golden()
        rng = np.random.default_rng(12)
        f0 = rng.standard_normal((6, 2))
        stack = propagate(f0, adj, 2)
        inter = np.array([[1, 0, 1], [0, 0, 0]])
        slab = gather_stacked(stack.layers, inter, (0, 2, 4))
        assert slab.shape == (2, 9, 2)
        gids = [1, 2, 5]
        for n in range(3):
            for l in range(3):
                assert (slab[0, n * 3 + l] == stack.layers[l][gids[n]]).all()

    def test_scatter_stacked_is_gather_adjoint(self):
        _, adj = golden()
        rng = np.random.default_rng(13)
        layers = [rng.standard_normal((6, 2)) for _ in range(3)]
        inter = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]])
        d_slab = rng.standard_normal((3, 9, 2))
        d_layers = [np.zeros((6, 2)) for _ in range(3)]
        scatter_stacked(d_layers, inter, (0, 2, 4), d_slab)
        lhs = float((gather_stacked(layers, inter, (0, 2, 4)) * d_slab).sum())
        rhs = sum(float((f * d).sum()) for f, d in zip(layers, d_layers))
        assert abs(lhs - rhs) < 1e-10

    def test_stacked_view_slices_are_layers(self):
        _, adj = golden()
        f0 = np.random.default_rng(14).standard_normal((6, 2))
        stack = propagate(f0, adj, 2)
        cube = stacked_view(stack)
        assert cube.shape == (6, 2, 3)
        for l in range(3):
            assert (cube[:, :, l] == stack.layers[l]).all()


class TestInit:
    def test_embeddings_deterministic_and_bounded(self):
        shape = TensorShape((3, 4, 2))
        a = init_embeddings(shape, rank=5, seed=3)
        b = init_embeddings(shape, rank=5, seed=3)
        assert (a.matrix == b.matrix).all()
        assert a.matrix.shape == (9, 5)
        assert a.offsets == (0, 3, 7)
        bound = np.sqrt(6.0 / (9 + 5))
        assert np.abs(a.matrix).max() <= bound

    def test_embeddings_seed_sensitivity(self):
        shape = TensorShape((3, 4, 2))
        a = init_embeddings(shape, rank=5, seed=3)
        c = init_embeddings(shape, rank=5, seed=4)
        assert not (a.matrix == c.matrix).all()

    def test_normal_scheme(self):
        shape = TensorShape((30, 30))
        e = init_embeddings(shape, rank=4, seed=0, scheme="normal")
        assert abs(float(e.matrix.std()) - 0.01) < 0.005
        with pytest.raises(ValueError):
            init_embeddings(shape, rank=4, seed=0, scheme="other")

    def test_transforms(self):
        ws = init_transforms(4, 3, seed=1)
        assert len(ws) == 3
        assert all(w.shape == (4, 4) for w in ws)
        assert not (ws[0] == ws[1]).all()
