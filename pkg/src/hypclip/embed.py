"""Graph-reconstruction embeddings in Euclidean space or the Poincare ball.

Training follows the usual negative-sampling recipe: for a positive pair
(u, v) the loss is the softmax cross-entropy of -d(u, v) against -d(u, v')
for sampled non-neighbours v'. Hyperbolic tables take Riemannian steps
through the exponential map; the clipped variant additionally caps every
point's norm at tanh(sqrt(c) r) / sqrt(c) after each update.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import geometry as geo
from .rng import Xoshiro256pp

MODES = ("euclidean", "hyperbolic", "clipped")
INIT_RADIUS = 1e-3


@dataclass(frozen=True)
class Hierarchy:
    """Nodes plus the transitive closure of a child -> parent relation."""

    nodes: tuple[str, ...]
    edges: frozenset  # (child_index, ancestor_index)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {name: i for i, name in enumerate(self.nodes)})
        if len(self.index) != len(self.nodes):
            raise ValueError("duplicate node names")
        n = len(self.nodes)
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop at {self.nodes[u]!r}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError("edge endpoint out of range")

    @classmethod
    def from_pairs(cls, pairs) -> "Hierarchy":
        """Build from (child, parent) name pairs and take the transitive closure."""
        nodes: dict[str, int] = {}
        parents: dict[int, set[int]] = {}
        for child, parent in pairs:
            cu = nodes.setdefault(child, len(nodes))
            pv = nodes.setdefault(parent, len(nodes))
            parents.setdefault(cu, set()).add(pv)
        closure = set()
        for start in parents:
            stack = list(parents[start])
            seen = set()
            while stack:
                a = stack.pop()
                if a in seen:
                    continue
                seen.add(a)
                if a == start:
                    raise ValueError(f"cycle through {start!r}")
                closure.add((start, a))
                stack.extend(parents.get(a, ()))
        names = tuple(sorted(nodes, key=nodes.get))
        return cls(names, frozenset(closure))

    def __len__(self):
        return len(self.nodes)

    def neighbours(self) -> list[np.ndarray]:
        """Symmetric closure adjacency: sorted partner indices per node."""
        adj: list[set[int]] = [set() for _ in self.nodes]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return [np.array(sorted(a), dtype=np.int64) for a in adj]

    def pairs(self) -> np.ndarray:
        """Closure edges in both orientations, sorted, as an (E, 2) array."""
        both = set(self.edges) | {(v, u) for u, v in self.edges}
        return np.array(sorted(both), dtype=np.int64).reshape(-1, 2)

    def negative_pools(self) -> list[np.ndarray]:
        """Per node, the nodes that are neither itself nor a closure neighbour."""
        n = len(self.nodes)
        out = []
        for u, nb in enumerate(self.neighbours()):
            mask = np.ones(n, dtype=bool)
            mask[nb] = False
            mask[u] = False
            out.append(np.flatnonzero(mask))
        return out


def read_edge_list(path) -> Hierarchy:
    """UTF-8 file with one ``child<TAB>parent`` pair per line; blank lines are skipped."""
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ValueError(f"{path}:{lineno}: expected 'child<TAB>parent'")
        pairs.append((parts[0], parts[1]))
    return Hierarchy.from_pairs(pairs)


def synthetic_tree(depth: int = 3, branching: int = 5) -> Hierarchy:
    """Complete tree: a root plus ``depth`` levels, each node with ``branching`` children."""
    pairs = []
    level = ["n"]
    for _ in range(depth):
        nxt = []
        for parent in level:
            for k in range(branching):
                child = f"{parent}.{k}"
                pairs.append((child, parent))
                nxt.append(child)
        level = nxt
    return Hierarchy.from_pairs(pairs)


def chain(length: int = 3) -> Hierarchy:
    return Hierarchy.from_pairs([(f"c{i + 1}", f"c{i}") for i in range(length - 1)])


# -- distances ---------------------------------------------------------------


def _poincare_dist(u: np.ndarray, v: np.ndarray, c: float):
    """arcosh form of the ball distance plus the pieces needed for its gradient."""
    uu = np.sum(u * u, axis=-1)
    vv = np.sum(v * v, axis=-1)
    diff = u - v
    dd = np.sum(diff * diff, axis=-1)
    alpha = np.maximum(1.0 - c * uu, 1e-15)
    beta = np.maximum(1.0 - c * vv, 1e-15)
    gamma = 1.0 + 2.0 * c * dd / (alpha * beta)
    root = np.sqrt(np.maximum(gamma * gamma - 1.0, 0.0))
    d = np.log(gamma + root) / math.sqrt(c)
    return d, (alpha, beta, dd, root)


def _poincare_dist_grads(u, v, c, parts):
    alpha, beta, dd, root = parts
    safe = np.where(root > 0, root, 1.0)
    k = np.where(root > 0, 4.0 * c / (math.sqrt(c) * safe * alpha * beta), 0.0)[..., None]
    diff = u - v
    gu = k * (diff + (c * dd / alpha)[..., None] * u)
    gv = k * (-diff + (c * dd / beta)[..., None] * v)
    return gu, gv


def pair_distance(u, v, mode: str, c: float = 1.0) -> np.ndarray:
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if mode == "euclidean":
        return np.linalg.norm(u - v, axis=-1)
    return _poincare_dist(u, v, c)[0]


def _dist_and_grads(u, v, mode, c):
    if mode == "euclidean":
        diff = u - v
        d = np.linalg.norm(diff, axis=-1)
        unit = np.where(d[..., None] > 0, diff / np.where(d > 0, d, 1.0)[..., None], 0.0)
        return d, unit, -unit
    d, parts = _poincare_dist(u, v, c)
    gu, gv = _poincare_dist_grads(u, v, c, parts)
    return d, gu, gv


class NceResult(NamedTuple):
    loss: float
    grad_u: np.ndarray  # (n,)
    grad_targets: np.ndarray  # (1 + negatives, n): positive first


def nce_loss(table: np.ndarray, u: int, v: int, negatives, mode: str = "hyperbolic",
             c: float = 1.0) -> NceResult:
    """-log softmax of -d(u, v) against -d(u, v') over v' in the negatives."""
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.size == 0:
        raise ValueError("need at least one negative")
    if np.any(negatives == v):
        raise ValueError("negatives must exclude the positive")
    targets = np.concatenate([[v], negatives])
    res = _nce_batch(table, np.array([u]), targets[None, :], mode, c)
    return NceResult(float(res[0][0]), res[1][0], res[2][0])


def _nce_batch(table, us, targets, mode, c):
    """Per-row losses and gradients for a batch of (u, [v, negatives...]) rows."""
    eu = table[us][:, None, :]
    et = table[targets]
    d, gu, gt = _dist_and_grads(np.broadcast_to(eu, et.shape), et, mode, c)
    neg = -d
    shift = neg.max(axis=1, keepdims=True)
    w = np.exp(neg - shift)
    lse = shift[:, 0] + np.log(w.sum(axis=1))
    loss = d[:, 0] + lse
    soft = w / w.sum(axis=1, keepdims=True)
    dl_dd = -soft
    dl_dd[:, 0] += 1.0
    grad_u = np.sum(dl_dd[..., None] * gu, axis=1)
    grad_t = dl_dd[..., None] * gt
    return loss, grad_u, grad_t


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 10
    epochs: int = 300
    lr: float = 1.0
    negatives: int = 10
    batch_size: int = 10
    burn_in: int = 10
    c: float = 1.0
    r: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.epochs < 0 or self.negatives < 1 or self.batch_size < 1:
            raise ValueError("dim, negatives and batch_size must be >= 1 and epochs >= 0")
        if not (self.lr > 0 and self.c > 0 and self.r > 0):
            raise ValueError("lr, c and r must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


def clip_bound(c: float, r: float) -> float:
    return math.tanh(math.sqrt(c) * r) / math.sqrt(c)


def init_table(n_nodes: int, dim: int, rng: Xoshiro256pp) -> np.ndarray:
    """Uniform draws from the Euclidean ball of radius 0.001."""
    direction = rng.normal((n_nodes, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = INIT_RADIUS * rng.uniform(n_nodes) ** (1.0 / dim)
    return direction * radius[:, None]


class EmbedResult(NamedTuple):
    table: np.ndarray
    losses: np.ndarray  # epoch-mean loss


def _training_rows(h: Hierarchy):
    """Positive pairs with the pool each one samples negatives from.

    The pool is the anchor's non-neighbours. An anchor adjacent to every
    other node (a root, or any node of a chain) falls back to all nodes
    except the pair itself; pairs with nothing to sample are dropped.
    """
    pools = h.negative_pools()
    n = len(h)
    rows, row_pools = [], []
    for u, v in h.pairs():
        pool = pools[u]
        if pool.size == 0:
            pool = np.array([w for w in range(n) if w != u and w != v], dtype=np.int64)
        if pool.size:
            rows.append((u, v))
            row_pools.append(pool)
    if not rows:
        raise ValueError("no edge has a node to sample negatives from")
    return np.array(rows, dtype=np.int64), row_pools


def _apply_update(table, rows, grads, lr, mode, c, bound):
    pts = table[rows]
    if mode == "euclidean":
        table[rows] = pts - lr * grads
        return
    factor = ((1.0 - c * np.sum(pts * pts, axis=1)) ** 2 / 4.0)[:, None]
    new = geo.exp_at(pts, -lr * factor * grads, c)
    if mode == "clipped":
        norms = np.linalg.norm(new, axis=1, keepdims=True)
        new = new * np.minimum(1.0, bound / np.where(norms > 0, norms, 1.0))
    table[rows] = geo.project(new, c)


def train_embeddings(h: Hierarchy, mode: str, cfg: EmbedConfig = EmbedConfig()) -> EmbedResult:
    if mode not in MODES:
        raise ValueError(f"unknown embedding mode {mode!r}")
    rng = Xoshiro256pp(cfg.seed)
    table = init_table(len(h), cfg.dim, rng.spawn())
    pairs, pools = _training_rows(h)
    bound = clip_bound(cfg.c, cfg.r)
    losses = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr / 10.0 if epoch < cfg.burn_in else cfg.lr
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = pairs[order[start:start + cfg.batch_size]]
            us, vs = batch[:, 0], batch[:, 1]
            u01 = rng.uniform((len(batch), cfg.negatives))
            negs = np.empty_like(u01, dtype=np.int64)
            for i, row in enumerate(order[start:start + cfg.batch_size]):
                pool = pools[row]
                negs[i] = pool[(u01[i] * pool.size).astype(np.int64)]
            targets = np.concatenate([vs[:, None], negs], axis=1)
            loss, gu, gt = _nce_batch(table, us, targets, mode, cfg.c)
            total += float(loss.sum())
            grad = np.zeros_like(table)
            np.add.at(grad, us, gu)
            np.add.at(grad, targets.ravel(), gt.reshape(-1, cfg.dim))
            rows = np.unique(np.concatenate([us, targets.ravel()]))
            _apply_update(table, rows, grad[rows], lr, mode, cfg.c, bound)
        if not np.all(np.isfinite(table)):
            raise ArithmeticError(f"non-finite embedding after epoch {epoch}")
        losses.append(total / len(pairs))
    return EmbedResult(table, np.asarray(losses))


# -- evaluation ---------------------------------------------------------------


def pairwise_distances(table: np.ndarray, mode: str, c: float = 1.0) -> np.ndarray:
    if mode == "euclidean":
        return pair_distance(table[:, None, :], table[None, :, :], mode)
    return _poincare_dist(table[:, None, :], table[None, :, :], c)[0]


def average_precision_ranked(dist_row: np.ndarray, positives: np.ndarray, exclude: int) -> float:
    """AP of ``positives`` when all nodes but ``exclude`` are ranked by ascending distance.

    Ties go to the lower node index.
    """
    idx = np.arange(dist_row.size)
    keep = idx != exclude
    order = idx[keep][np.lexsort((idx[keep], dist_row[keep]))]
    hits = np.isin(order, positives)
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def map_score(table: np.ndarray, h: Hierarchy, mode: str = "hyperbolic", c: float = 1.0) -> float:
    """Mean over nodes of the average precision of their closure neighbours."""
    dist = pairwise_distances(np.asarray(table, dtype=np.float64), mode, c)
    aps = []
    isolated = []
    for u, nb in enumerate(h.neighbours()):
        if nb.size == 0:
            isolated.append(h.nodes[u])
            continue
        aps.append(average_precision_ranked(dist[u], nb, u))
    if isolated:
        warnings.warn(f"{len(isolated)} isolated node(s) excluded from mAP: {isolated[:5]}",
                      stacklevel=2)
    if not aps:
        raise ValueError("no node has a neighbour")
    return float(np.mean(aps))


def write_embeddings(path, h: Hierarchy, table: np.ndarray) -> None:
    """One line per node: the name, then its coordinates (9 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name, row in zip(h.nodes, table):
            fh.write(name + " " + " ".join(f"{x:.9g}" for x in row) + "\n")
