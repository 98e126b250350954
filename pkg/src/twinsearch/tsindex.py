"""Balanced envelope tree over all length-``l`` windows of a series.

Leaves hold window start positions only; every node carries the pointwise
upper/lower envelope of everything beneath it.  A query descends only into
nodes whose envelope lies within ``epsilon`` of it, and the surviving leaf
positions are verified against the series.

File layout (little-endian, version 1)::

    header   8s  magic  b"TSINDEX\\0"
             H   version
             I   l, I mu_c, I max_c
             B   mode code (0 raw, 1 zglobal, 2 zsub)
             Q   n (series length), Q node count, Q series fingerprint
    nodes    pre-order; each record is
             B   kind (0 leaf, 1 internal)
             I   entry count k
             l*d upper envelope, l*d lower envelope
             k*Q positions (leaf) or absolute byte offsets of children (internal)
    trailer  I   CRC-32 of everything above
"""

from __future__ import annotations

import struct
import time
from typing import Iterator, List, Optional, Tuple

import numpy as np

from twinsearch._binio import IndexFormatError, Reader, seal, unseal
from twinsearch.mbts import Mbts, dist_seq_envelopes, pairwise_envelope_gaps
from twinsearch.series import (
    NormalizationMode,
    Query,
    SearchStats,
    TimeSeries,
    verify_positions,
)

__all__ = ["TsNode", "TsIndex", "IndexInvariantError", "DEFAULT_MU_C", "DEFAULT_MAX_C"]

DEFAULT_MU_C = 10
DEFAULT_MAX_C = 30

MAGIC = b"TSINDEX\0"
VERSION = 1
_HEADER = struct.Struct("<8sHIIIBQQQ")
_NODE = struct.Struct("<BI")
_LEAF, _INTERNAL = 0, 1
# bookkeeping bytes charged per node in the live-size estimate
NODE_OVERHEAD = 48


class IndexInvariantError(AssertionError):
    pass


class TsNode:
    """A tree node.  Internal nodes also keep their children's envelopes
    stacked row-wise in ``cu``/``cl`` so a query can test all children in
    one vectorized step."""

    __slots__ = ("is_leaf", "upper", "lower", "children", "positions", "cu", "cl")

    def __init__(self, is_leaf: bool, upper: np.ndarray, lower: np.ndarray):
        self.is_leaf = is_leaf
        self.upper = upper
        self.lower = lower
        self.children: Optional[List["TsNode"]] = None
        self.positions: Optional[List[int]] = None
        self.cu: Optional[np.ndarray] = None
        self.cl: Optional[np.ndarray] = None

    @classmethod
    def leaf(cls, positions, upper, lower) -> "TsNode":
        node = cls(True, np.array(upper, dtype=np.float64), np.array(lower, dtype=np.float64))
        node.positions = [int(p) for p in positions]
        return node

    @classmethod
    def internal(cls, children, max_c: int) -> "TsNode":
        children = list(children)
        l = children[0].upper.shape[0]
        node = cls(False, np.empty(l), np.empty(l))
        node.children = children
        node.cu = np.empty((max(max_c + 1, len(children)), l))
        node.cl = np.empty_like(node.cu)
        for i, c in enumerate(children):
            node.cu[i] = c.upper
            node.cl[i] = c.lower
        k = len(children)
        node.upper[:] = node.cu[:k].max(axis=0)
        node.lower[:] = node.cl[:k].min(axis=0)
        return node

    @property
    def entries(self) -> int:
        return len(self.positions) if self.is_leaf else len(self.children)

    @property
    def mbts(self) -> Mbts:
        return Mbts(self.upper.copy(), self.lower.copy())

    def iter_nodes(self) -> Iterator["TsNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend(reversed(node.children))

    def iter_positions(self) -> Iterator[int]:
        for node in self.iter_nodes():
            if node.is_leaf:
                yield from node.positions

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "internal"
        return f"<TsNode {kind} entries={self.entries}>"


class TsIndex:
    """Envelope tree index for twin subsequence search.

    Parameters
    ----------
    series : TimeSeries
        The indexed series.
    l : int
        Window length.
    mu_c, max_c : int
        Minimum and maximum number of entries per non-root node.
    mode : NormalizationMode
        Frame in which windows are materialized.
    """

    name = "ts"

    def __init__(self, series: TimeSeries, l: int, mu_c: int = DEFAULT_MU_C,
                 max_c: int = DEFAULT_MAX_C, mode=NormalizationMode.GLOBAL_Z):
        l, mu_c, max_c = int(l), int(mu_c), int(max_c)
        if l < 1 or l > series.n:
            raise ValueError(f"subsequence length {l} must be in [1, {series.n}]")
        if mu_c < 2:
            raise ValueError(f"minimum capacity must be at least 2, got {mu_c}")
        # an overflowing node has max_c + 1 entries; both halves need mu_c
        if 2 * mu_c > max_c + 1:
            raise ValueError(
                f"capacities mu_c={mu_c}, max_c={max_c} cannot be split: need 2*mu_c <= max_c + 1"
            )
        self.series = series
        self.l = l
        self.mu_c = mu_c
        self.max_c = max_c
        self.mode = NormalizationMode.parse(mode)
        self.view = series.view(self.mode, l)
        self.root: Optional[TsNode] = None
        self.size = 0
        self._inserted = np.zeros(self.view.npos, dtype=bool)

    @classmethod
    def build(cls, series: TimeSeries, l: int, mu_c: int = DEFAULT_MU_C,
              max_c: int = DEFAULT_MAX_C, mode=NormalizationMode.GLOBAL_Z) -> "TsIndex":
        index = cls(series, l, mu_c, max_c, mode)
        for p in range(index.view.npos):
            index.insert(p)
        return index

    # -- construction ------------------------------------------------------

    def insert(self, p: int):
        p = int(p)
        if not 0 <= p < self.view.npos:
            raise ValueError(f"position {p} out of range [0, {self.view.npos})")
        if self._inserted[p]:
            raise ValueError(f"position {p} already indexed")
        s = self.view.window(p)
        self._inserted[p] = True
        self.size += 1
        if self.root is None:
            self.root = TsNode.leaf([p], s, s)
            return
        node = self.root
        path: List[Tuple[TsNode, int]] = []
        while not node.is_leaf:
            np.maximum(node.upper, s, out=node.upper)
            np.minimum(node.lower, s, out=node.lower)
            k = len(node.children)
            idx = self._choose_child(node, dist_seq_envelopes(s, node.cu[:k], node.cl[:k]))
            np.maximum(node.cu[idx], s, out=node.cu[idx])
            np.minimum(node.cl[idx], s, out=node.cl[idx])
            path.append((node, idx))
            node = node.children[idx]
        np.maximum(node.upper, s, out=node.upper)
        np.minimum(node.lower, s, out=node.lower)
        node.positions.append(p)
        if len(node.positions) > self.max_c:
            self._handle_overflow(node, path)

    @staticmethod
    def _choose_child(node: TsNode, d: np.ndarray) -> int:
        ties = np.flatnonzero(d == d.min())
        if ties.size == 1:
            return int(ties[0])
        counts = [node.children[i].entries for i in ties]
        return int(ties[int(np.argmin(counts))])

    def _handle_overflow(self, node: TsNode, path):
        while node.entries > self.max_c:
            a, b = self.split_leaf(node) if node.is_leaf else self.split_internal(node)
            if not path:
                self.root = TsNode.internal([a, b], self.max_c)
                return
            parent, idx = path.pop()
            parent.children[idx] = a
            parent.cu[idx] = a.upper
            parent.cl[idx] = a.lower
            k = len(parent.children)
            parent.children.append(b)
            parent.cu[k] = b.upper
            parent.cl[k] = b.lower
            node = parent

    def _partition(self, uppers: np.ndarray, lowers: np.ndarray, gaps: np.ndarray):
        """Seeded two-way partition of ``k`` entries given by their envelopes.

        The farthest pair seeds the two groups; the rest are taken in order
        and join the group whose envelope is nearer, unless one group needs
        every remaining entry to reach ``mu_c``.
        """
        k = gaps.shape[0]
        rows, cols = np.triu_indices(k, 1)
        t = int(np.argmax(gaps[rows, cols]))
        seeds = (int(rows[t]), int(cols[t]))
        groups = ([seeds[0]], [seeds[1]])
        env_u = [uppers[seeds[0]].copy(), uppers[seeds[1]].copy()]
        env_l = [lowers[seeds[0]].copy(), lowers[seeds[1]].copy()]
        rest = [e for e in range(k) if e not in seeds]
        for i, e in enumerate(rest):
            remaining = len(rest) - i
            if len(groups[0]) + remaining <= self.mu_c:
                side = 0
            elif len(groups[1]) + remaining <= self.mu_c:
                side = 1
            else:
                d = [max(0.0, float(np.max(lowers[e] - env_u[g])), float(np.max(env_l[g] - uppers[e])))
                     for g in (0, 1)]
                if d[0] != d[1]:
                    side = 0 if d[0] < d[1] else 1
                else:
                    side = 1 if len(groups[1]) < len(groups[0]) else 0
            groups[side].append(e)
            np.maximum(env_u[side], uppers[e], out=env_u[side])
            np.minimum(env_l[side], lowers[e], out=env_l[side])
        return [sorted(g) for g in groups], env_u, env_l

    def split_leaf(self, node: TsNode) -> Tuple[TsNode, TsNode]:
        if not node.is_leaf or node.entries != self.max_c + 1:
            raise RuntimeError(f"split_leaf called on {node!r} with max_c={self.max_c}")
        X = self.view.gather(node.positions)
        gaps = np.abs(X[:, None, :] - X[None, :, :]).max(axis=2)
        groups, env_u, env_l = self._partition(X, X, gaps)
        return tuple(
            TsNode.leaf([node.positions[e] for e in g], env_u[s], env_l[s])
            for s, g in enumerate(groups)
        )

    def split_internal(self, node: TsNode) -> Tuple[TsNode, TsNode]:
        if node.is_leaf or node.entries != self.max_c + 1:
            raise RuntimeError(f"split_internal called on {node!r} with max_c={self.max_c}")
        k = node.entries
        U, L = node.cu[:k], node.cl[:k]
        groups, _, _ = self._partition(U, L, pairwise_envelope_gaps(U, L))
        return tuple(TsNode.internal([node.children[e] for e in g], self.max_c) for g in groups)

    # -- querying ----------------------------------------------------------

    def _query_values(self, query: Query) -> np.ndarray:
        if query.l != self.l:
            raise ValueError(f"query length {query.l} != indexed length {self.l}")
        if query.mode is not None and query.mode is not self.mode:
            raise ValueError(f"query mode {query.mode.value} != index mode {self.mode.value}")
        return query.values

    def search(self, query: Query, pruned: Optional[list] = None):
        """Return ``(positions, stats)`` for all twins of ``query``.

        If ``pruned`` is a list, every node discarded by the envelope test is
        appended to it.
        """
        q = self._query_values(query)
        eps = query.epsilon
        t0 = time.perf_counter()
        stats = SearchStats()
        cands: List[int] = []
        root = self.root
        if root is not None and root.is_leaf:
            if dist_seq_envelopes(q, root.upper[None], root.lower[None])[0] <= eps:
                stats.nodes_visited += 1
                cands.extend(root.positions)
            else:
                stats.nodes_pruned += 1
                if pruned is not None:
                    pruned.append(root)
        elif root is not None:
            stack = [root]
            while stack:
                node = stack.pop()
                children = node.children
                k = len(children)
                ok = dist_seq_envelopes(q, node.cu[:k], node.cl[:k]) <= eps
                keep = np.flatnonzero(ok)
                stats.nodes_visited += keep.size
                stats.nodes_pruned += k - keep.size
                if pruned is not None and keep.size < k:
                    pruned.extend(children[i] for i in np.flatnonzero(~ok))
                if children[0].is_leaf:
                    for i in keep:
                        cands.extend(children[i].positions)
                else:
                    stack.extend(children[i] for i in keep[::-1])
        stats.candidates = len(cands)
        res = verify_positions(self.view, q, np.array(cands, dtype=np.int64), eps)
        res.sort()
        stats.results = int(res.size)
        stats.elapsed = time.perf_counter() - t0
        return res, stats

    # -- inspection --------------------------------------------------------

    def iter_nodes(self) -> Iterator[TsNode]:
        return iter(()) if self.root is None else self.root.iter_nodes()

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    @property
    def height(self) -> int:
        h, node = 0, self.root
        while node is not None:
            h += 1
            node = None if node.is_leaf else node.children[0]
        return h

    def live_bytes(self) -> int:
        """Estimated in-memory size: per node two envelopes plus a fixed overhead,
        plus 8 bytes per entry."""
        total = 0
        for node in self.iter_nodes():
            total += NODE_OVERHEAD + 16 * self.l + 8 * node.entries
        return total

    def summary(self) -> dict:
        nodes = leaves = 0
        for node in self.iter_nodes():
            nodes += 1
            leaves += node.is_leaf
        return {"engine": self.name, "l": self.l, "mode": self.mode.value, "mu_c": self.mu_c,
                "max_c": self.max_c, "positions": self.size, "nodes": nodes, "leaves": leaves,
                "height": self.height}

    def audit(self) -> dict:
        """Check every structural invariant; raise :class:`IndexInvariantError` on the first
        violation, otherwise return :meth:`summary`."""
        if self.root is None:
            if self.size:
                raise IndexInvariantError("empty tree but positions recorded")
            return self.summary()
        leaf_depths = set()
        seen: List[int] = []

        def walk(node: TsNode, depth: int, is_root: bool):
            k = node.entries
            if k > self.max_c:
                raise IndexInvariantError(f"{node!r} at depth {depth} exceeds max_c={self.max_c}")
            if not is_root and k < self.mu_c:
                raise IndexInvariantError(f"{node!r} at depth {depth} below mu_c={self.mu_c}")
            if is_root and not node.is_leaf and k < 2:
                raise IndexInvariantError("internal root with fewer than two children")
            if node.is_leaf:
                leaf_depths.add(depth)
                seen.extend(node.positions)
                X = self.view.gather(node.positions)
                up, lo = X.max(axis=0), X.min(axis=0)
            else:
                envs = [walk(c, depth + 1, False) for c in node.children]
                U = np.array([e[0] for e in envs])
                L = np.array([e[1] for e in envs])
                if not (np.array_equal(node.cu[:k], U) and np.array_equal(node.cl[:k], L)):
                    raise IndexInvariantError(f"{node!r} at depth {depth}: stale child envelope rows")
                up, lo = U.max(axis=0), L.min(axis=0)
            if not (np.array_equal(node.upper, up) and np.array_equal(node.lower, lo)):
                raise IndexInvariantError(f"{node!r} at depth {depth}: envelope is not exact")
            return up, lo

        walk(self.root, 0, True)
        if len(leaf_depths) != 1:
            raise IndexInvariantError(f"leaves at several depths: {sorted(leaf_depths)}")
        got = np.sort(np.array(seen, dtype=np.int64))
        want = np.flatnonzero(self._inserted)
        if not np.array_equal(got, want):
            raise IndexInvariantError("leaf positions differ from the inserted position set")
        return self.summary()

    def same_structure(self, other: "TsIndex") -> bool:
        if (self.l, self.mu_c, self.max_c, self.mode) != (other.l, other.mu_c, other.max_c, other.mode):
            return False
        a, b = list(self.iter_nodes()), list(other.iter_nodes())
        if len(a) != len(b):
            return False
        for x, y in zip(a, b):
            if x.is_leaf != y.is_leaf or x.entries != y.entries:
                return False
            if not (np.array_equal(x.upper, y.upper) and np.array_equal(x.lower, y.lower)):
                return False
            if x.is_leaf and x.positions != y.positions:
                return False
        return True

    # -- persistence -------------------------------------------------------

    def save(self) -> bytes:
        nodes = list(self.iter_nodes())
        rec = _NODE.size + 16 * self.l
        offsets = {}
        off = _HEADER.size
        for node in nodes:
            offsets[id(node)] = off
            off += rec + 8 * node.entries
        out = [_HEADER.pack(MAGIC, VERSION, self.l, self.mu_c, self.max_c, self.mode.code,
                            self.series.n, len(nodes), self.series.fingerprint)]
        for node in nodes:
            out.append(_NODE.pack(_LEAF if node.is_leaf else _INTERNAL, node.entries))
            out.append(node.upper.astype("<f8").tobytes())
            out.append(node.lower.astype("<f8").tobytes())
            if node.is_leaf:
                refs = node.positions
            else:
                refs = [offsets[id(c)] for c in node.children]
            out.append(np.asarray(refs, dtype="<u8").tobytes())
        return seal(b"".join(out))

    @classmethod
    def load(cls, data: bytes, series: TimeSeries) -> "TsIndex":
        payload = unseal(data, MAGIC, VERSION)
        r = Reader(payload)
        _, _, l, mu_c, max_c, mode_code, n, node_count, fp = r.unpack(_HEADER.format)
        if n != series.n or fp != series.fingerprint:
            raise ValueError("index file was built on a different series")
        try:
            mode = NormalizationMode.from_code(mode_code)
            index = cls(series, l, mu_c, max_c, mode)
        except ValueError as e:
            raise IndexFormatError(f"invalid header: {e}", 0) from e
        npos = index.view.npos
        count = 0

        def parse(off: int) -> TsNode:
            nonlocal count
            r.seek(off)
            kind, k = r.unpack(_NODE.format)
            if kind not in (_LEAF, _INTERNAL) or k == 0 or k > max_c + 1:
                raise IndexFormatError(f"invalid node record kind={kind} entries={k}", off)
            upper = r.array("<f8", l)
            lower = r.array("<f8", l)
            refs = r.array("<u8", k).astype(np.int64)
            count += 1
            if count > node_count:
                raise IndexFormatError("more node records than declared", off)
            if kind == _LEAF:
                if np.any(refs < 0) or np.any(refs >= npos) or np.any(index._inserted[refs]):
                    raise IndexFormatError("invalid or duplicate position in leaf", off)
                index._inserted[refs] = True
                node = TsNode.leaf(refs.tolist(), upper, lower)
            else:
                if np.any(refs <= off):
                    raise IndexFormatError("child offset does not point forward", off)
                node = TsNode.internal([parse(int(o)) for o in refs], max_c)
                if not (np.array_equal(node.upper, upper) and np.array_equal(node.lower, lower)):
                    raise IndexFormatError("internal envelope disagrees with its children", off)
            return node

        if node_count:
            index.root = parse(_HEADER.size)
        if count != node_count:
            raise IndexFormatError(f"declared {node_count} nodes, found {count}", r.offset)
        index.size = int(index._inserted.sum())
        return index
