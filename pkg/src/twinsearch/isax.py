"""PAA and SAX summaries and a simplified iSAX tree adapted to Chebyshev search.

Every window is summarized by its ``m`` segment means (PAA) and quantized
against a breakpoint table into a SAX word.  Symbols are stored at the
maximum cardinality; a node at a lower cardinality sees the high bits of
each symbol, so child words always refine their parent's word.

Two twins at threshold ``epsilon`` have segment means at most ``epsilon``
apart, so a node whose symbol ranges sit farther than ``epsilon`` from the
query's segment means in any segment cannot hold a twin.

File layout (little-endian, version 1)::

    header   8s magic b"ISAXIDX\\0", H version, I l, I m, B base bits,
             B max bits, I leaf cap, B mode code, Q n, Q series fingerprint,
             Q node count
    table    (2**max_bits - 1) * d breakpoints at the maximum cardinality
    nodes    pre-order starting with the root; each record is
             B kind (0 leaf, 1 internal, 2 root), B split segment, B next segment,
             I entry count k, m*B symbols, m*B bits,
             k*Q positions (leaf) or absolute byte offsets of children
    trailer  I CRC-32
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass
from statistics import NormalDist
from typing import Dict, List, Optional, Tuple

import numpy as np

from twinsearch._binio import IndexFormatError, Reader, seal, unseal
from twinsearch.series import (
    NormalizationMode,
    Query,
    SearchStats,
    TimeSeries,
    verify_positions,
)

__all__ = [
    "paa",
    "paa_weights",
    "make_breakpoints",
    "SaxWord",
    "sax",
    "symbol_range",
    "BreakpointTable",
    "isax_compatible",
    "IsaxNode",
    "IsaxIndex",
]

DEFAULT_SEGMENTS = 10
DEFAULT_BASE_CARDINALITY = 4
DEFAULT_MAX_CARDINALITY = 256
DEFAULT_LEAF_CAP = 10_000

MAGIC = b"ISAXIDX\0"
VERSION = 1
_HEADER = struct.Struct("<8sHIIBBIBQQQ")
_NODE = struct.Struct("<BBBI")
_LEAF, _INTERNAL, _ROOT = 0, 1, 2
_NO_SEGMENT = 255
# bookkeeping bytes charged per node in the live-size estimate
NODE_OVERHEAD = 48
_ROWS = 16384


def _bits_of(cardinality: int) -> int:
    c = int(cardinality)
    if c < 2 or c & (c - 1):
        raise ValueError(f"cardinality must be a power of two >= 2, got {cardinality}")
    return c.bit_length() - 1


def paa_weights(l: int, m: int) -> np.ndarray:
    """``m x l`` averaging matrix; a point straddling two segments is split
    between them in proportion to the overlap."""
    if not 1 <= m <= l:
        raise ValueError(f"number of segments must be in [1, {l}], got {m}")
    # scaled by m, point i covers [i*m, (i+1)*m) and segment j covers [j*l, (j+1)*l)
    pts = np.arange(l)
    segs = np.arange(m)
    lo = np.maximum(pts[None, :] * m, segs[:, None] * l)
    hi = np.minimum((pts[None, :] + 1) * m, (segs[:, None] + 1) * l)
    return np.maximum(hi - lo, 0) / l


def paa(s, m: int) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return paa_weights(s.shape[0], m) @ s


def _strictly_increasing(bp: np.ndarray) -> np.ndarray:
    bp = bp.copy()
    for i in range(1, bp.shape[0]):
        if bp[i] <= bp[i - 1]:
            bp[i] = np.nextafter(bp[i - 1], np.inf)
    return bp


def make_breakpoints(cardinality: int, mode=NormalizationMode.GLOBAL_Z,
                     segment_means=None) -> np.ndarray:
    """Breakpoints splitting the real line into ``cardinality`` symbol ranges.

    z-normalized modes use standard normal quantiles.  RAW uses empirical
    quantiles of ``segment_means`` (all PAA segment means of the series).
    """
    bits = _bits_of(cardinality)
    c = 1 << bits
    probs = [k / c for k in range(1, c)]
    mode = NormalizationMode.parse(mode)
    if mode is NormalizationMode.RAW:
        if segment_means is None:
            raise ValueError("raw breakpoints need the segment means of the series")
        means = np.asarray(segment_means, dtype=np.float64).ravel()
        return _strictly_increasing(np.quantile(means, probs))
    nd = NormalDist()
    return np.array([nd.inv_cdf(p) for p in probs])


def symbol_range(symbol: int, breakpoints: np.ndarray) -> Tuple[float, float]:
    """Value interval ``[lo, hi)`` denoted by ``symbol``; the outer ones are unbounded."""
    lo = -math.inf if symbol == 0 else float(breakpoints[symbol - 1])
    hi = math.inf if symbol == breakpoints.shape[0] else float(breakpoints[symbol])
    return lo, hi


@dataclass(frozen=True)
class SaxWord:
    symbols: Tuple[int, ...]
    bits: Tuple[int, ...]

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(1 << b for b in self.bits)


def sax(paa_vector, breakpoints: np.ndarray) -> SaxWord:
    """Quantize segment means; a mean equal to a breakpoint takes the upper symbol."""
    bp = np.asarray(breakpoints, dtype=np.float64)
    bits = _bits_of(bp.shape[0] + 1)
    syms = np.searchsorted(bp, np.asarray(paa_vector, dtype=np.float64), side="right")
    return SaxWord(tuple(int(s) for s in syms), (bits,) * len(syms))


class BreakpointTable:
    """Breakpoints at the maximum cardinality, from which every coarser
    cardinality is read off (its breakpoints are a subset)."""

    def __init__(self, breakpoints: np.ndarray):
        bp = np.asarray(breakpoints, dtype=np.float64)
        self.max_bits = _bits_of(bp.shape[0] + 1)
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        self.bp = bp
        self._ext = np.concatenate([[-np.inf], bp, [np.inf]])

    def breakpoints(self, bits: int) -> np.ndarray:
        step = 1 << (self.max_bits - bits)
        return self.bp[step - 1::step]

    def ranges(self, symbols, bits) -> Tuple[np.ndarray, np.ndarray]:
        symbols = np.asarray(symbols, dtype=np.int64)
        shift = self.max_bits - np.asarray(bits, dtype=np.int64)
        return self._ext[symbols << shift], self._ext[(symbols + 1) << shift]

    def symbols(self, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.bp, values, side="right").astype(np.uint8)


def isax_compatible(query_paa, word: SaxWord, epsilon: float, table: BreakpointTable) -> bool:
    """Whether a node with ``word`` may hold a twin of a query with segment means
    ``query_paa``: in every segment the query mean must lie within ``epsilon`` of
    the node's symbol range."""
    q = np.asarray(query_paa, dtype=np.float64)
    if q.shape[0] != len(word.symbols):
        raise ValueError(f"segment count mismatch: {q.shape[0]} != {len(word.symbols)}")
    lo, hi = table.ranges(word.symbols, word.bits)
    return bool(np.all(q >= lo - epsilon) and np.all(q <= hi + epsilon))


class IsaxNode:
    __slots__ = ("symbols", "bits", "positions", "children", "split_seg", "next_seg", "lo", "hi")

    def __init__(self, symbols: np.ndarray, bits: np.ndarray, next_seg: int,
                 table: BreakpointTable):
        self.symbols = np.asarray(symbols, dtype=np.int64)
        self.bits = np.asarray(bits, dtype=np.int64)
        self.positions: Optional[List[int]] = []
        self.children: Optional[List["IsaxNode"]] = None
        self.split_seg = _NO_SEGMENT
        self.next_seg = next_seg
        self.lo, self.hi = table.ranges(self.symbols, self.bits)

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def word(self) -> SaxWord:
        return SaxWord(tuple(int(s) for s in self.symbols), tuple(int(b) for b in self.bits))

    @property
    def entries(self) -> int:
        return len(self.positions) if self.is_leaf else len(self.children)

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend(reversed(node.children))

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "internal"
        return f"<IsaxNode {kind} word={self.symbols.tolist()} bits={self.bits.tolist()}>"


class IsaxIndex:
    """iSAX-style tree over all windows; searched with per-segment ``epsilon`` widening.

    Parameters
    ----------
    series : TimeSeries
    l : int
        Window length.
    m : int, default=10
        Number of PAA segments.
    base_cardinality : int, default=4
        Cardinality of every segment in the root's children.
    leaf_cap : int, default=10000
        Leaf size that triggers a split.
    mode : NormalizationMode
    max_cardinality : int, default=256
        Upper limit for cardinality promotion.
    """

    name = "isax"

    def __init__(self, series: TimeSeries, l: int, m: int = DEFAULT_SEGMENTS,
                 base_cardinality: int = DEFAULT_BASE_CARDINALITY,
                 leaf_cap: int = DEFAULT_LEAF_CAP, mode=NormalizationMode.GLOBAL_Z,
                 max_cardinality: int = DEFAULT_MAX_CARDINALITY,
                 table: Optional[BreakpointTable] = None):
        l, m, leaf_cap = int(l), int(m), int(leaf_cap)
        if l < 1 or l > series.n:
            raise ValueError(f"subsequence length {l} must be in [1, {series.n}]")
        if not 1 <= m <= l:
            raise ValueError(f"number of segments must be in [1, {l}], got {m}")
        if m > 254:
            raise ValueError("at most 254 segments are supported")
        if leaf_cap < 1:
            raise ValueError(f"leaf capacity must be positive, got {leaf_cap}")
        self.base_bits = _bits_of(base_cardinality)
        self.max_bits = _bits_of(max_cardinality)
        if self.max_bits > 8:
            raise ValueError("maximum cardinality is 256")
        if self.base_bits > self.max_bits:
            raise ValueError("base cardinality exceeds maximum cardinality")
        self.series = series
        self.l = l
        self.m = m
        self.leaf_cap = leaf_cap
        self.mode = NormalizationMode.parse(mode)
        self.view = series.view(self.mode, l)
        self.weights = paa_weights(l, m)
        self.root: Dict[Tuple[int, ...], IsaxNode] = {}
        self.size = 0
        self._inserted = np.zeros(self.view.npos, dtype=bool)
        self._words: Optional[np.ndarray] = None
        self._root_cache = None
        if self.mode is NormalizationMode.PER_SUBSEQ_Z:
            maxabs = math.sqrt(l)
        else:
            maxabs = float(np.abs(self.view.base).max())
        # bound on rounding in a computed segment mean
        self._mean_err = 4 * l * np.finfo(np.float64).eps * (maxabs + 1.0)
        if table is None:
            if self.mode is NormalizationMode.RAW:
                bp = make_breakpoints(1 << self.max_bits, self.mode, self.segment_means())
            else:
                bp = make_breakpoints(1 << self.max_bits, self.mode)
            table = BreakpointTable(bp)
        if table.max_bits != self.max_bits:
            raise ValueError("breakpoint table does not match the maximum cardinality")
        self.table = table

    @classmethod
    def build(cls, series: TimeSeries, l: int, m: int = DEFAULT_SEGMENTS,
              base_cardinality: int = DEFAULT_BASE_CARDINALITY,
              leaf_cap: int = DEFAULT_LEAF_CAP, mode=NormalizationMode.GLOBAL_Z,
              max_cardinality: int = DEFAULT_MAX_CARDINALITY) -> "IsaxIndex":
        index = cls(series, l, m, base_cardinality, leaf_cap, mode, max_cardinality)
        index._ensure_words()
        for p in range(index.view.npos):
            index.insert(p)
        return index

    def segment_means(self) -> np.ndarray:
        """PAA of every window, shape ``(npos, m)``."""
        out = np.empty((self.view.npos, self.m))
        for start in range(0, self.view.npos, _ROWS):
            stop = min(start + _ROWS, self.view.npos)
            out[start:stop] = self.view.block(start, stop) @ self.weights.T
        return out

    def _ensure_words(self) -> np.ndarray:
        if self._words is None:
            self._words = self.table.symbols(self.segment_means())
        return self._words

    # -- construction ------------------------------------------------------

    def insert(self, p: int):
        p = int(p)
        if not 0 <= p < self.view.npos:
            raise ValueError(f"position {p} out of range [0, {self.view.npos})")
        if self._inserted[p]:
            raise ValueError(f"position {p} already indexed")
        w = self._ensure_words()[p].astype(np.int64)
        key = tuple((w >> (self.max_bits - self.base_bits)).tolist())
        node = self.root.get(key)
        if node is None:
            node = IsaxNode(np.array(key), np.full(self.m, self.base_bits), 0, self.table)
            self.root[key] = node
            self._root_cache = None
        while not node.is_leaf:
            s = node.split_seg
            b = node.children[0].bits[s]
            node = node.children[(w[s] >> (self.max_bits - b)) & 1]
        node.positions.append(p)
        self._inserted[p] = True
        self.size += 1
        if len(node.positions) > self.leaf_cap:
            self._split(node)

    def _split(self, node: IsaxNode):
        """Promote one segment to double cardinality, round-robin from
        ``node.next_seg``.  A leaf whose segments are all at the maximum
        cardinality stays oversized."""
        seg = None
        for t in range(self.m):
            s = (node.next_seg + t) % self.m
            if node.bits[s] < self.max_bits:
                seg = s
                break
        if seg is None:
            return
        pos = np.array(node.positions, dtype=np.int64)
        nb = int(node.bits[seg]) + 1
        side = (self._words[pos, seg].astype(np.int64) >> (self.max_bits - nb)) & 1
        children = []
        for bit in (0, 1):
            symbols = node.symbols.copy()
            symbols[seg] = symbols[seg] * 2 + bit
            bits = node.bits.copy()
            bits[seg] = nb
            child = IsaxNode(symbols, bits, (seg + 1) % self.m, self.table)
            child.positions = pos[side == bit].tolist()
            children.append(child)
        node.positions = None
        node.children = children
        node.split_seg = seg
        for child in children:
            if len(child.positions) > self.leaf_cap:
                self._split(child)

    # -- querying ----------------------------------------------------------

    def _root_arrays(self):
        if self._root_cache is None:
            nodes = list(self.root.values())
            lo = np.array([n.lo for n in nodes]).reshape(len(nodes), self.m)
            hi = np.array([n.hi for n in nodes]).reshape(len(nodes), self.m)
            self._root_cache = (nodes, lo, hi)
        return self._root_cache

    def search(self, query: Query):
        if query.l != self.l:
            raise ValueError(f"query length {query.l} != indexed length {self.l}")
        if query.mode is not None and query.mode is not self.mode:
            raise ValueError(f"query mode {query.mode.value} != index mode {self.mode.value}")
        t0 = time.perf_counter()
        q = query.values
        qpaa = self.weights @ q
        # widen by the rounding bound of both sides' segment means
        tol = query.epsilon + self._mean_err + 4 * self.l * np.finfo(np.float64).eps * (
            float(np.abs(q).max()) + 1.0)
        stats = SearchStats()
        cands: List[int] = []
        nodes, lo, hi = self._root_arrays()
        ok = np.all(qpaa >= lo - tol, axis=1) & np.all(qpaa <= hi + tol, axis=1)
        keep = np.flatnonzero(ok)
        stats.nodes_visited += keep.size
        stats.nodes_pruned += len(nodes) - keep.size
        stack = [nodes[i] for i in keep[::-1]]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                cands.extend(node.positions)
                continue
            for child in reversed(node.children):
                if np.all(qpaa >= child.lo - tol) and np.all(qpaa <= child.hi + tol):
                    stats.nodes_visited += 1
                    stack.append(child)
                else:
                    stats.nodes_pruned += 1
        stats.candidates = len(cands)
        res = verify_positions(self.view, q, np.array(cands, dtype=np.int64), query.epsilon)
        res.sort()
        stats.results = int(res.size)
        stats.elapsed = time.perf_counter() - t0
        return res, stats

    # -- inspection --------------------------------------------------------

    def iter_nodes(self):
        for key in sorted(self.root):
            yield from self.root[key].iter_nodes()

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self.iter_nodes())

    def live_bytes(self) -> int:
        total = 0
        for node in self.iter_nodes():
            total += NODE_OVERHEAD + 2 * self.m + 8 * node.entries
        return total

    def summary(self) -> dict:
        nodes = leaves = 0
        for node in self.iter_nodes():
            nodes += 1
            leaves += node.is_leaf
        return {"engine": self.name, "l": self.l, "mode": self.mode.value, "m": self.m,
                "base_cardinality": 1 << self.base_bits, "leaf_cap": self.leaf_cap,
                "positions": self.size, "root_children": len(self.root), "nodes": nodes,
                "leaves": leaves}

    def audit(self) -> dict:
        """Check word-prefix consistency, leaf capacities and position completeness."""
        words = self._ensure_words().astype(np.int64)
        seen = []
        for key, top in self.root.items():
            if tuple(top.symbols.tolist()) != key or np.any(top.bits != self.base_bits):
                raise AssertionError(f"root child {key} carries word {top!r}")
            for node in top.iter_nodes():
                if not node.is_leaf:
                    s = node.split_seg
                    for bit, child in enumerate(node.children):
                        if child.bits[s] != node.bits[s] + 1 or \
                                child.symbols[s] != 2 * node.symbols[s] + bit:
                            raise AssertionError(f"{child!r} does not refine {node!r}")
                    continue
                pos = np.array(node.positions, dtype=np.int64)
                if pos.size:
                    prefix = words[pos] >> (self.max_bits - node.bits)
                    if np.any(prefix != node.symbols):
                        raise AssertionError(f"{node!r} holds positions with other words")
                if pos.size > self.leaf_cap and np.any(node.bits < self.max_bits):
                    raise AssertionError(f"{node!r} exceeds leaf cap but can still split")
                seen.extend(node.positions)
        if not np.array_equal(np.sort(np.array(seen, dtype=np.int64)), np.flatnonzero(self._inserted)):
            raise AssertionError("leaf positions differ from the inserted position set")
        return self.summary()

    def same_structure(self, other: "IsaxIndex") -> bool:
        if (self.l, self.m, self.base_bits, self.max_bits, self.leaf_cap, self.mode) != \
                (other.l, other.m, other.base_bits, other.max_bits, other.leaf_cap, other.mode):
            return False
        if not np.array_equal(self.table.bp, other.table.bp) or sorted(self.root) != sorted(other.root):
            return False
        a, b = list(self.iter_nodes()), list(other.iter_nodes())
        if len(a) != len(b):
            return False
        for x, y in zip(a, b):
            if x.is_leaf != y.is_leaf or x.split_seg != y.split_seg or x.next_seg != y.next_seg:
                return False
            if not (np.array_equal(x.symbols, y.symbols) and np.array_equal(x.bits, y.bits)):
                return False
            if x.is_leaf and x.positions != y.positions:
                return False
        return True

    # -- persistence -------------------------------------------------------

    def save(self) -> bytes:
        nodes = list(self.iter_nodes())
        rec = _NODE.size + 2 * self.m
        off = _HEADER.size + 8 * self.table.bp.shape[0]
        root_off = off
        off += rec + 8 * len(self.root)
        offsets = {}
        for node in nodes:
            offsets[id(node)] = off
            off += rec + 8 * node.entries
        out = [_HEADER.pack(MAGIC, VERSION, self.l, self.m, self.base_bits, self.max_bits,
                            self.leaf_cap, self.mode.code, self.series.n,
                            self.series.fingerprint, len(nodes)),
               self.table.bp.astype("<f8").tobytes()]
        zeros = bytes(2 * self.m)
        out.append(_NODE.pack(_ROOT, _NO_SEGMENT, 0, len(self.root)) + zeros)
        out.append(np.array([offsets[id(self.root[k])] for k in sorted(self.root)],
                            dtype="<u8").tobytes())
        assert len(out[0]) + len(out[1]) == root_off
        for node in nodes:
            kind = _LEAF if node.is_leaf else _INTERNAL
            out.append(_NODE.pack(kind, node.split_seg, node.next_seg, node.entries))
            out.append(node.symbols.astype(np.uint8).tobytes())
            out.append(node.bits.astype(np.uint8).tobytes())
            refs = node.positions if node.is_leaf else [offsets[id(c)] for c in node.children]
            out.append(np.asarray(refs, dtype="<u8").tobytes())
        return seal(b"".join(out))

    @classmethod
    def load(cls, data: bytes, series: TimeSeries) -> "IsaxIndex":
        payload = unseal(data, MAGIC, VERSION)
        r = Reader(payload)
        (_, _, l, m, base_bits, max_bits, leaf_cap, mode_code, n, fp,
         node_count) = r.unpack(_HEADER.format)
        if n != series.n or fp != series.fingerprint:
            raise ValueError("index file was built on a different series")
        try:
            table = BreakpointTable(r.array("<f8", (1 << max_bits) - 1))
            index = cls(series, l, m, 1 << base_bits, leaf_cap,
                        NormalizationMode.from_code(mode_code), 1 << max_bits, table)
        except (ValueError, OverflowError) as e:
            raise IndexFormatError(f"invalid header: {e}", 0) from e
        npos = index.view.npos
        count = 0

        def record(off: int):
            r.seek(off)
            kind, split_seg, next_seg, k = r.unpack(_NODE.format)
            symbols = r.array("u1", m).astype(np.int64)
            bits = r.array("u1", m).astype(np.int64)
            refs = r.array("<u8", k).astype(np.int64)
            return kind, split_seg, next_seg, symbols, bits, refs

        def parse(off: int) -> IsaxNode:
            nonlocal count
            kind, split_seg, next_seg, symbols, bits, refs = record(off)
            count += 1
            if count > node_count or kind not in (_LEAF, _INTERNAL) or next_seg >= m \
                    or np.any(bits < 1) or np.any(bits > max_bits) or np.any(symbols >> bits):
                raise IndexFormatError("invalid node record", off)
            node = IsaxNode(symbols, bits, next_seg, table)
            if kind == _LEAF:
                if np.any(refs < 0) or np.any(refs >= npos) or np.any(index._inserted[refs]):
                    raise IndexFormatError("invalid or duplicate position in leaf", off)
                index._inserted[refs] = True
                node.positions = refs.tolist()
            else:
                if refs.size != 2 or split_seg >= m or np.any(refs <= off):
                    raise IndexFormatError("invalid internal node", off)
                node.positions = None
                node.split_seg = split_seg
                node.children = [parse(int(o)) for o in refs]
            return node

        root_off = r.offset
        kind, _, _, _, _, refs = record(root_off)
        if kind != _ROOT:
            raise IndexFormatError("missing root record", root_off)
        for o in refs:
            child = parse(int(o))
            key = tuple(child.symbols.tolist())
            if key in index.root or np.any(child.bits != base_bits):
                raise IndexFormatError("invalid root child", int(o))
            index.root[key] = child
        if count != node_count:
            raise IndexFormatError(f"declared {node_count} nodes, found {count}", r.offset)
        index.size = int(index._inserted.sum())
        return index
