"""Edge-aware multi-head graph attention and graph-level pooling.

The corridor graph is small and fixed per scenario, so all neighborhood
machinery is expressed with constant index arrays (gather / segment_sum)
over an edge list.  Every node additionally receives a synthetic self-edge
with zero edge features, which keeps attention defined at boundary nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import Layer, MlpBlock, _param

EASTBOUND = 0
WESTBOUND = 1


@dataclass
class GraphTopology:
    """Directed corridor graph: nodes are intersections, edges are the
    major-street road segments (one entry stub plus the chain, per
    direction)."""

    num_nodes: int
    edges: List[Tuple[int, int]]
    directions: List[int]  # EASTBOUND / WESTBOUND per edge

    @classmethod
    def corridor(cls, k: int) -> "GraphTopology":
        """Canonical layout: eastbound entry stub then west-to-east chain,
        westbound entry stub then east-to-west chain (2k edges)."""
        if k < 2:
            raise ValueError("corridor needs at least 2 intersections")
        east = [(0, 0)] + [(i, i + 1) for i in range(k - 1)]
        west = [(k - 1, k - 1)] + [(i + 1, i) for i in reversed(range(k - 1))]
        return cls(num_nodes=k,
                   edges=east + west,
                   directions=[EASTBOUND] * k + [WESTBOUND] * k)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edges_with_direction(self, direction: int) -> List[int]:
        return [i for i, d in enumerate(self.directions) if d == direction]

    def validate(self) -> None:
        if len(self.edges) != len(self.directions):
            raise ValueError("edge/direction lengths differ")
        for (u, v) in self.edges:
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise ValueError(f"edge ({u},{v}) references unknown node")
        # The chain portion of each direction must be acyclic (monotone) and
        # each adjacent pair must appear exactly once per direction.
        for direction, step in ((EASTBOUND, 1), (WESTBOUND, -1)):
            chain = [self.edges[i] for i in self.edges_with_direction(direction)
                     if self.edges[i][0] != self.edges[i][1]]
            expected = {(i, i + step) for i in range(self.num_nodes) if 0 <= i + step < self.num_nodes}
            if set(chain) != expected or len(chain) != len(expected):
                raise ValueError(f"direction {direction} chain is not a simple corridor")


@dataclass
class _EdgeIndex:
    src: np.ndarray
    dst: np.ndarray
    num_real: int


def _extended_index(topo: GraphTopology) -> _EdgeIndex:
    src = np.array([u for u, _ in topo.edges] + list(range(topo.num_nodes)), dtype=np.int64)
    dst = np.array([v for _, v in topo.edges] + list(range(topo.num_nodes)), dtype=np.int64)
    return _EdgeIndex(src, dst, len(topo.edges))


def _segment_max_const(values: np.ndarray, dst: np.ndarray, num_nodes: int) -> np.ndarray:
    """Per-destination max of [B, E', heads], gathered back onto edges.
    Used as a detached stabilization shift inside the softmax."""
    out = np.empty_like(values)
    for n in range(num_nodes):
        sel = np.flatnonzero(dst == n)
        out[:, sel] = values[:, sel].max(axis=1, keepdims=True)
    return out


class GatLayer(Layer):
    """Graph attention with edge features in the score (not the message).

    Multi-head layers concatenate their heads (out_width = heads * hidden);
    single-head layers emit hidden width directly.
    """

    def __init__(self, in_width: int, edge_width: int, out_width: int, heads: int,
                 rng: Optional[np.random.Generator] = None, name: str = "gat",
                 attention_slope: float = 0.2):
        rng = rng if rng is not None else np.random.default_rng(0)
        if heads < 1:
            raise ValueError("heads must be >= 1")
        if heads > 1 and out_width % heads != 0:
            raise ValueError(f"out_width {out_width} not divisible by {heads} heads")
        self.heads = heads
        self.hidden = out_width // heads if heads > 1 else out_width
        self.aggregation = "concatenate" if heads > 1 else "single"
        self.in_width = in_width
        self.edge_width = edge_width
        self.out_width = out_width
        self.attention_slope = attention_slope
        h, d = heads, self.hidden
        self.node_proj = _param(rng, f"{name}.node_proj", (h * d, in_width), in_width, h * d)
        self.edge_proj = _param(rng, f"{name}.edge_proj", (h * d, edge_width), edge_width, h * d)
        self.attn_src = _param(rng, f"{name}.attn_src", (h, d), 3 * d, 1)
        self.attn_dst = _param(rng, f"{name}.attn_dst", (h, d), 3 * d, 1)
        self.attn_edge = _param(rng, f"{name}.attn_edge", (h, d), 3 * d, 1)

    def parameters(self):
        for t in (self.node_proj, self.edge_proj, self.attn_src, self.attn_dst, self.attn_edge):
            yield t.name, t

    def _scores(self, proj: Tensor, vec: Tensor) -> Tensor:
        """Dot each head row of [B, E', heads, hidden] with vec [heads, hidden]."""
        shape = proj.data.shape
        v = ad.broadcast_to(ad.reshape(vec, (1, 1) + vec.data.shape), shape)
        return ad.reduce_sum(ad.multiply(proj, v), axis=-1)

    def forward_batched(self, topo: GraphTopology, node_feats: Tensor,
                        edge_feats: Tensor,
                        return_attention: bool = False):
        """node_feats [B, k, in], edge_feats [B, E, edge_width] -> [B, k, out]."""
        k = topo.num_nodes
        if node_feats.data.ndim != 3 or node_feats.data.shape[1] != k:
            raise ShapeError(f"gat: node features {node_feats.data.shape} "
                             f"do not match {k} nodes")
        if node_feats.data.shape[2] != self.in_width:
            raise ShapeError(f"gat: node width {node_feats.data.shape[2]} != {self.in_width}")
        if edge_feats.data.ndim != 3 or edge_feats.data.shape[1] != topo.num_edges:
            raise ShapeError(f"gat: edge features {edge_feats.data.shape} "
                             f"do not match {topo.num_edges} edges")
        if edge_feats.data.shape[2] != self.edge_width:
            raise ShapeError(f"gat: edge width {edge_feats.data.shape[2]} != {self.edge_width}")
        B = node_feats.data.shape[0]
        h, d = self.heads, self.hidden
        idx = _extended_index(topo)
        E_ext = idx.src.size

        wh = ad.reshape(ad.linear(node_feats, self.node_proj), (B, k, h, d))
        zeros = Tensor(np.zeros((B, k, self.edge_width)))
        efull = ad.concat([edge_feats, zeros], axis=1)
        we = ad.reshape(ad.linear(efull, self.edge_proj), (B, E_ext, h, d))

        src_h = ad.gather(wh, idx.src)
        dst_h = ad.gather(wh, idx.dst)
        score = ad.add(ad.add(self._scores(src_h, self.attn_src),
                              self._scores(dst_h, self.attn_dst)),
                       self._scores(we, self.attn_edge))
        score = ad.leaky_relu(score, self.attention_slope)

        shift = Tensor(_segment_max_const(score.data, idx.dst, k))
        expd = ad.exp(ad.subtract(score, shift))
        denom = ad.segment_sum(expd, idx.dst, k)
        alpha = ad.divide(expd, ad.gather(denom, idx.dst))

        weighted = ad.multiply(src_h, ad.broadcast_to(
            ad.reshape(alpha, (B, E_ext, h, 1)), (B, E_ext, h, d)))
        agg = ad.relu(ad.segment_sum(weighted, idx.dst, k))
        out = ad.reshape(agg, (B, k, h * d))
        if self.aggregation == "single":
            out = ad.reshape(out, (B, k, d))
        if return_attention:
            return out, alpha.data, idx
        return out


def gat_forward(layer: GatLayer, topo: GraphTopology, node_feats, edge_feats) -> Tensor:
    """Unbatched entry point: [k, in] and [E, edge_width] -> [k, out]."""
    nf = node_feats if isinstance(node_feats, Tensor) else Tensor(node_feats)
    ef = edge_feats if isinstance(edge_feats, Tensor) else Tensor(edge_feats)
    nb = ad.reshape(nf, (1,) + nf.data.shape)
    eb = ad.reshape(ef, (1,) + ef.data.shape)
    out = layer.forward_batched(topo, nb, eb)
    return ad.reshape(out, out.data.shape[1:])


class EdgeMlp(Layer):
    """MLP over concatenated static and time-series edge features,
    producing fixed-width edge embeddings."""

    def __init__(self, static_width: int, series_width: int, out_width: int = 64,
                 hidden_width: int = 64, rng: Optional[np.random.Generator] = None,
                 name: str = "edge_mlp"):
        self.static_width = static_width
        self.series_width = series_width
        self.out_width = out_width
        self.block = MlpBlock([static_width + series_width, hidden_width, out_width],
                              rng=rng, name=name)

    def forward_batched(self, combined: Tensor) -> Tensor:
        """combined [B, E, static+series] -> [B, E, out_width]."""
        if combined.data.shape[-1] != self.static_width + self.series_width:
            raise ShapeError(f"edge_mlp: width {combined.data.shape[-1]} != "
                             f"{self.static_width + self.series_width}")
        return self.block(combined)

    def parameters(self):
        yield from self.block.parameters()


def edge_mlp_forward(mlp: EdgeMlp, edge_feats_static, edge_series) -> Tensor:
    """[E, static] and [E, series] -> [E, out_width]."""
    s = edge_feats_static if isinstance(edge_feats_static, Tensor) else Tensor(edge_feats_static)
    t = edge_series if isinstance(edge_series, Tensor) else Tensor(edge_series)
    if s.data.shape[0] != t.data.shape[0]:
        raise ShapeError(f"edge_mlp: {s.data.shape[0]} static rows vs {t.data.shape[0]} series rows")
    combined = ad.concat([s, t], axis=1)
    batched = ad.reshape(combined, (1,) + combined.data.shape)
    out = mlp.forward_batched(batched)
    return ad.reshape(out, out.data.shape[1:])


def directional_pool_batched(topo: GraphTopology, edge_embeddings: Tensor) -> Tuple[Tensor, Tensor]:
    """Mean edge embedding per direction tag: [B, E, d] -> 2 x [B, d]."""
    dirs = np.asarray(topo.directions, dtype=np.int64)
    n_east = int((dirs == EASTBOUND).sum())
    n_west = int((dirs == WESTBOUND).sum())
    if n_east == 0 or n_west == 0:
        raise ValueError("directional_pool: a direction has no edges")
    pooled = ad.segment_sum(edge_embeddings, dirs, 2)
    east = ad.scale(ad.reshape(ad.gather(pooled, np.array([EASTBOUND])),
                               (pooled.data.shape[0], pooled.data.shape[2])), 1.0 / n_east)
    west = ad.scale(ad.reshape(ad.gather(pooled, np.array([WESTBOUND])),
                               (pooled.data.shape[0], pooled.data.shape[2])), 1.0 / n_west)
    return east, west


def directional_pool(topo: GraphTopology, edge_embeddings) -> Tuple[Tensor, Tensor]:
    """[E, d] -> (eastbound mean [d], westbound mean [d])."""
    e = edge_embeddings if isinstance(edge_embeddings, Tensor) else Tensor(edge_embeddings)
    if e.data.shape[0] != topo.num_edges:
        raise ShapeError(f"directional_pool: {e.data.shape[0]} rows vs {topo.num_edges} edges")
    east, west = directional_pool_batched(topo, ad.reshape(e, (1,) + e.data.shape))
    d = e.data.shape[1]
    return ad.reshape(east, (d,)), ad.reshape(west, (d,))


def fuse_embeddings(node_embeddings, eastbound_pool, westbound_pool) -> Tensor:
    """concat(mean over nodes, eastbound pool, westbound pool) -> [3*d]."""
    n = node_embeddings if isinstance(node_embeddings, Tensor) else Tensor(node_embeddings)
    e = eastbound_pool if isinstance(eastbound_pool, Tensor) else Tensor(eastbound_pool)
    w = westbound_pool if isinstance(westbound_pool, Tensor) else Tensor(westbound_pool)
    if n.data.ndim != 2 or e.data.ndim != 1 or w.data.ndim != 1:
        raise ShapeError("fuse_embeddings: expected [k, d], [d], [d]")
    if not (n.data.shape[1] == e.data.shape[0] == w.data.shape[0]):
        raise ShapeError(f"fuse_embeddings: widths differ: {n.data.shape[1]}, "
                         f"{e.data.shape[0]}, {w.data.shape[0]}")
    return ad.concat([ad.reduce_mean(n, axis=0), e, w], axis=0)
