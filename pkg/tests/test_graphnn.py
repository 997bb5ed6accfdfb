import numpy as np
import pytest

from corridor_twin import autodiff as ad
from corridor_twin import graphnn as gn
from helpers import check_gradients


def dense_mask_gat(layer, topo, x, efeat):
    """Brute-force reference: per head, build a dense masked score matrix
    over (destination, source) pairs including the synthetic self edge,
    softmax it, and aggregate.  Independent of the edge-list fast path."""
    k = topo.num_nodes
    h, d = layer.heads, layer.hidden
    wn = layer.node_proj.data
    wedge = layer.edge_proj.data
    out = np.zeros((k, h, d))
    for head in range(h):
        W = wn[head * d:(head + 1) * d]
        We = wedge[head * d:(head + 1) * d]
        a_s = layer.attn_src.data[head]
        a_d = layer.attn_dst.data[head]
        a_e = layer.attn_edge.data[head]
        proj = x @ W.T
        for i in range(k):
            # candidate messages: every in-edge plus the synthetic self edge
            senders, scores = [], []
            for e, (u, v) in enumerate(topo.edges):
                if v != i:
                    continue
                s = a_s @ proj[u] + a_d @ proj[i] + a_e @ (We @ efeat[e])
                senders.append(u)
                scores.append(s)
            senders.append(i)
            scores.append(a_s @ proj[i] + a_d @ proj[i] + a_e @ (We @ np.zeros(layer.edge_width)))
            scores = np.array(scores)
            scores = np.where(scores > 0, scores, layer.attention_slope * scores)
            e_ = np.exp(scores - scores.max())
            alpha = e_ / e_.sum()
            out[i, head] = np.maximum(sum(a * proj[u] for a, u in zip(alpha, senders)), 0.0)
    return out.reshape(k, h * d)


def random_topology(rng, k):
    n_edges = int(rng.integers(1, 2 * k + 1))
    edges = [(int(rng.integers(0, k)), int(rng.integers(0, k))) for _ in range(n_edges)]
    dirs = [int(rng.integers(0, 2)) for _ in range(n_edges)]
    return gn.GraphTopology(k, edges, dirs)


class TestTopology:
    def test_corridor_defaults(self):
        topo = gn.GraphTopology.corridor(8)
        assert topo.num_nodes == 8 and topo.num_edges == 16
        topo.validate()
        assert len(topo.edges_with_direction(gn.EASTBOUND)) == 8
        assert len(topo.edges_with_direction(gn.WESTBOUND)) == 8
        # canonical order: eastbound west-to-east then westbound east-to-west
        assert topo.edges[1] == (0, 1) and topo.edges[-1] == (1, 0)

    def test_validate_rejects_broken_chain(self):
        topo = gn.GraphTopology.corridor(4)
        bad = gn.GraphTopology(4, topo.edges[:-1], topo.directions[:-1])
        with pytest.raises(ValueError):
            bad.validate()

    def test_rejects_unknown_node(self):
        with pytest.raises(ValueError):
            gn.GraphTopology(2, [(0, 5)], [0]).validate()


class TestGatLayer:
    def test_single_node_self_edge_only(self):
        rng = np.random.default_rng(0)
        layer = gn.GatLayer(3, 2, 4, heads=1, rng=rng)
        topo = gn.GraphTopology(1, [], [])
        x = rng.standard_normal((1, 3))
        out = gn.gat_forward(layer, topo, x, np.zeros((0, 2)))
        expect = np.maximum(x @ layer.node_proj.data.T, 0.0)
        assert np.abs(out.data - expect).max() < 1e-12

    def test_symmetric_senders_share_attention(self):
        rng = np.random.default_rng(1)
        layer = gn.GatLayer(3, 2, 4, heads=1, rng=rng)
        topo = gn.GraphTopology(3, [(1, 0), (2, 0)], [0, 0])
        feat = rng.standard_normal(3)
        x = np.stack([rng.standard_normal(3), feat, feat])
        ef = np.tile(rng.standard_normal(2), (2, 1))
        nb = ad.Tensor(x[None])
        eb = ad.Tensor(ef[None])
        _, alpha, idx = layer.forward_batched(topo, nb, eb, return_attention=True)
        to_zero = [a for e, a in enumerate(alpha[0, :, 0]) if idx.dst[e] == 0 and idx.src[e] != 0]
        assert len(to_zero) == 2 and abs(to_zero[0] - to_zero[1]) < 1e-12

    @pytest.mark.parametrize("heads,out_w", [(1, 5), (4, 8)])
    def test_matches_dense_mask_oracle_random(self, heads, out_w):
        rng = np.random.default_rng(42 + heads)
        layer = gn.GatLayer(4, 3, out_w, heads=heads, rng=rng)
        topo = random_topology(rng, 4)
        x = rng.standard_normal((4, 4))
        ef = rng.standard_normal((topo.num_edges, 3))
        fast = gn.gat_forward(layer, topo, x, ef).data
        ref = dense_mask_gat(layer, topo, x, ef)
        assert np.abs(fast - ref).max() < 1e-9

    def test_matches_dense_mask_oracle_small_topologies(self):
        # exhaustive corridor topologies up to 5 nodes plus random graphs
        rng = np.random.default_rng(7)
        for k in range(2, 6):
            topos = [gn.GraphTopology.corridor(k)] + [random_topology(rng, k) for _ in range(10)]
            for topo in topos:
                layer = gn.GatLayer(3, 2, 8, heads=4, rng=rng)
                x = rng.standard_normal((k, 3))
                ef = rng.standard_normal((topo.num_edges, 2))
                fast = gn.gat_forward(layer, topo, x, ef).data
                ref = dense_mask_gat(layer, topo, x, ef)
                assert np.abs(fast - ref).max() < 1e-9

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        layer = gn.GatLayer(3, 2, 8, heads=4, rng=rng)
        topo = gn.GraphTopology.corridor(5)
        x = rng.standard_normal((1, 5, 3))
        ef = rng.standard_normal((1, topo.num_edges, 2))
        _, alpha, idx = layer.forward_batched(topo, ad.Tensor(x), ad.Tensor(ef),
                                              return_attention=True)
        sums = np.zeros((5, layer.heads))
        np.add.at(sums, idx.dst, alpha[0])
        assert np.abs(sums - 1.0).max() < 1e-9

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        layer = gn.GatLayer(3, 2, 8, heads=4, rng=rng)
        k = 6
        topo = random_topology(rng, k)
        x = rng.standard_normal((k, 3))
        ef = rng.standard_normal((topo.num_edges, 2))
        out = gn.gat_forward(layer, topo, x, ef).data

        perm = rng.permutation(k)
        inv = np.argsort(perm)
        # relabel node i -> perm[i], keep edge list order
        topo_p = gn.GraphTopology(k, [(int(perm[u]), int(perm[v])) for u, v in topo.edges],
                                  list(topo.directions))
        out_p = gn.gat_forward(layer, topo_p, x[inv], ef).data
        assert np.abs(out_p[perm] - out).max() < 1e-12

    def test_width_mismatch_errors(self):
        rng = np.random.default_rng(5)
        layer = gn.GatLayer(3, 2, 4, heads=1, rng=rng)
        topo = gn.GraphTopology.corridor(3)
        with pytest.raises(ad.ShapeError):
            gn.gat_forward(layer, topo, np.zeros((3, 9)), np.zeros((6, 2)))
        with pytest.raises(ad.ShapeError):
            gn.gat_forward(layer, topo, np.zeros((3, 3)), np.zeros((5, 2)))

    def test_gradients(self):
        rng = np.random.default_rng(6)
        topo = gn.GraphTopology.corridor(3)
        layer = gn.GatLayer(3, 2, 4, heads=2, rng=rng)
        x = rng.standard_normal((1, 3, 3))
        ef = rng.standard_normal((1, 6, 2))
        tgt = rng.standard_normal((1, 3, 4))
        params = [layer.node_proj, layer.edge_proj, layer.attn_src,
                  layer.attn_dst, layer.attn_edge]
        arrays = [x, ef] + [p.data.copy() for p in params]

        def loss_fn(ts):
            lay = gn.GatLayer(3, 2, 4, heads=2, rng=np.random.default_rng(6))
            lay.node_proj, lay.edge_proj = ts[2], ts[3]
            lay.attn_src, lay.attn_dst, lay.attn_edge = ts[4], ts[5], ts[6]
            out = lay.forward_batched(topo, ts[0], ts[1])
            return ad.mse_loss(out, ad.Tensor(tgt))

        check_gradients(loss_fn, arrays)


class TestEdgeMlp:
    def test_constant_bias_chain(self):
        rng = np.random.default_rng(8)
        mlp = gn.EdgeMlp(3, 2, out_width=4, hidden_width=5, rng=rng)
        for layer in mlp.block.layers:
            layer.weight.data[:] = 0.0
        mlp.block.layers[0].bias.data[:] = 1.0
        mlp.block.layers[1].bias.data[:] = np.arange(4, dtype=float) - 1.0
        out = gn.edge_mlp_forward(mlp, np.zeros((5, 3)), np.ones((5, 2)))
        expect = np.maximum(np.arange(4, dtype=float) - 1.0, 0.0)
        assert np.array_equal(out.data, np.tile(expect, (5, 1)))

    def test_identical_edges_identical_embeddings(self):
        rng = np.random.default_rng(9)
        mlp = gn.EdgeMlp(3, 2, rng=rng)
        row_s, row_t = rng.standard_normal(3), rng.standard_normal(2)
        out = gn.edge_mlp_forward(mlp, np.tile(row_s, (4, 1)), np.tile(row_t, (4, 1)))
        assert np.array_equal(out.data, np.tile(out.data[0], (4, 1)))

    def test_width_mismatch(self):
        mlp = gn.EdgeMlp(3, 2, rng=np.random.default_rng(0))
        with pytest.raises(ad.ShapeError):
            gn.edge_mlp_forward(mlp, np.zeros((4, 3)), np.zeros((3, 2)))
        with pytest.raises(ad.ShapeError):
            mlp.forward_batched(ad.Tensor(np.zeros((1, 4, 9))))

    def test_gradient(self):
        rng = np.random.default_rng(10)
        mlp = gn.EdgeMlp(3, 2, out_width=4, hidden_width=5, rng=rng)
        s = rng.standard_normal((4, 3))
        t = rng.standard_normal((4, 2))
        probe = rng.standard_normal((4, 4))
        w0 = mlp.block.layers[0].weight

        def loss_fn(ts):
            mlp.block.layers[0].weight = ts[0]
            out = gn.edge_mlp_forward(mlp, ad.Tensor(s), ad.Tensor(t))
            return ad.reduce_sum(ad.multiply(out, ad.Tensor(probe)))

        try:
            check_gradients(loss_fn, [w0.data.copy()])
        finally:
            mlp.block.layers[0].weight = w0


class TestPoolingAndFusion:
    def test_all_equal_embeddings(self):
        topo = gn.GraphTopology.corridor(4)
        row = np.arange(3.0)
        emb = np.tile(row, (topo.num_edges, 1))
        east, west = gn.directional_pool(topo, emb)
        assert np.abs(east.data - row).max() < 1e-12
        assert np.abs(west.data - row).max() < 1e-12

    def test_single_edge_per_direction(self):
        topo = gn.GraphTopology(2, [(0, 1), (1, 0)], [gn.EASTBOUND, gn.WESTBOUND])
        emb = np.array([[1.0, 2.0], [3.0, 4.0]])
        east, west = gn.directional_pool(topo, emb)
        assert np.array_equal(east.data, [1.0, 2.0])
        assert np.array_equal(west.data, [3.0, 4.0])

    def test_mean_matches_recount(self):
        rng = np.random.default_rng(11)
        topo = gn.GraphTopology.corridor(5)
        emb = rng.standard_normal((topo.num_edges, 6))
        east, west = gn.directional_pool(topo, emb)
        ei = topo.edges_with_direction(gn.EASTBOUND)
        wi = topo.edges_with_direction(gn.WESTBOUND)
        assert np.abs(east.data - emb[ei].mean(axis=0)).max() < 1e-12
        assert np.abs(west.data - emb[wi].mean(axis=0)).max() < 1e-12

    def test_empty_direction_errors(self):
        topo = gn.GraphTopology(2, [(0, 1)], [gn.EASTBOUND])
        with pytest.raises(ValueError):
            gn.directional_pool(topo, np.zeros((1, 4)))

    def test_fusion_layout_and_invariance(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal(4)
        pe, pw = rng.standard_normal(4), rng.standard_normal(4)
        fused = gn.fuse_embeddings(np.tile(v, (3, 1)), pe, pw)
        assert np.abs(fused.data - np.concatenate([v, pe, pw])).max() < 1e-12

        nodes = rng.standard_normal((5, 4))
        f1 = gn.fuse_embeddings(nodes, pe, pw).data
        f2 = gn.fuse_embeddings(nodes[rng.permutation(5)], pe, pw).data
        assert np.abs(f1 - f2).max() < 1e-12

    def test_fusion_matches_recompute(self):
        rng = np.random.default_rng(13)
        nodes = rng.standard_normal((4, 6))
        pe, pw = rng.standard_normal(6), rng.standard_normal(6)
        fused = gn.fuse_embeddings(nodes, pe, pw).data
        assert np.abs(fused - np.concatenate([nodes.mean(axis=0), pe, pw])).max() < 1e-12

    def test_fusion_invariant_to_edge_reorder_within_direction(self):
        rng = np.random.default_rng(14)
        topo = gn.GraphTopology.corridor(4)
        emb = rng.standard_normal((topo.num_edges, 5))
        east, west = gn.directional_pool(topo, emb)
        # shuffle eastbound edges among themselves
        ei = topo.edges_with_direction(gn.EASTBOUND)
        order = list(rng.permutation(ei))
        full = list(range(topo.num_edges))
        for pos, e in zip(ei, order):
            full[pos] = e
        topo2 = gn.GraphTopology(4, [topo.edges[i] for i in full],
                                 [topo.directions[i] for i in full])
        east2, west2 = gn.directional_pool(topo2, emb[full])
        assert np.abs(east.data - east2.data).max() < 1e-12
        assert np.abs(west.data - west2.data).max() < 1e-12
