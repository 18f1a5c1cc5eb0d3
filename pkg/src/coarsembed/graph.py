"""CSR graphs, edge-list ingestion and the link-prediction split."""

import io
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

ID_LIMIT = 2**31 - 1
GCSR_MAGIC = b"GCSR"
GCSR_VERSION = 1


class EdgeListError(ValueError):
    """Malformed edge-list input."""


class CapacityError(ValueError):
    """A vertex id or count does not fit the 32-bit id width."""


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Adjacency in compressed sparse row form.

    Undirected graphs store every edge in both directions, so ``num_slots`` is
    twice the number of undirected edges.  Neighbor slices are sorted and free
    of duplicates and self-loops.
    """

    offsets: np.ndarray
    neighbors: np.ndarray
    directed: bool = False
    ids: np.ndarray | None = field(default=None, repr=False)

    @property
    def vertex_count(self) -> int:
        return len(self.offsets) - 1

    @property
    def num_slots(self) -> int:
        return int(self.offsets[-1])

    @property
    def num_edges(self) -> int:
        """Edge count in the input's sense (undirected pairs counted once)."""
        return self.num_slots if self.directed else self.num_slots // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def degree(self, v: int) -> int:
        return int(self.offsets[v + 1] - self.offsets[v])

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v]:self.offsets[v + 1]]

    def nbytes(self) -> int:
        return self.offsets.nbytes + self.neighbors.nbytes

    def edge_array(self) -> np.ndarray:
        """(m, 2) array of edges; each undirected edge once with u < v."""
        src = np.repeat(np.arange(self.vertex_count, dtype=np.int64), self.degrees())
        dst = self.neighbors.astype(np.int64)
        if not self.directed:
            keep = src < dst
            src, dst = src[keep], dst[keep]
        return np.stack([src, dst], axis=1)

    @classmethod
    def from_edges(cls, n, src, dst, directed=False, ids=None):
        """Build a canonical CSR from parallel endpoint arrays.

        Self-loops are dropped, duplicates merged and undirected input mirrored.
        """
        if n > ID_LIMIT + 1:
            raise CapacityError(f"{n} vertices exceed the 32-bit id width")
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if len(src) != len(dst):
            raise ValueError("endpoint arrays differ in length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValueError("endpoint outside [0, n)")
        keep = src != dst
        src, dst = src[keep], dst[keep]
        if not directed:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        key = np.unique(src * n + dst)
        src, dst = key // n, key % n
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
        return cls(offsets, dst.astype(np.int32), bool(directed), ids)

    def validate(self):
        """Raise AssertionError if any CSR invariant is broken."""
        n = self.vertex_count
        off = self.offsets
        assert off[0] == 0 and off[-1] == len(self.neighbors)
        assert np.all(np.diff(off) >= 0)
        if len(self.neighbors):
            assert self.neighbors.min() >= 0 and self.neighbors.max() < n
        src = np.repeat(np.arange(n), self.degrees())
        assert not np.any(src == self.neighbors), "self-loop"
        same_row = src[1:] == src[:-1]
        assert np.all(self.neighbors[1:][same_row] > self.neighbors[:-1][same_row]), \
            "unsorted or duplicate neighbors"


def density(g: Graph) -> float:
    """Edge slots per vertex, the average degree seen by a CSR traversal."""
    if g.vertex_count == 0:
        raise ValueError("density of an empty graph is undefined")
    return g.num_slots / g.vertex_count


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    data = source.read()
    return data.encode() if isinstance(data, str) else data


def _parse_slow(text):
    """Line-by-line parse; used to locate errors precisely."""
    us, vs = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(b"#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise EdgeListError(f"line {lineno}: expected 2 tokens, got {len(parts)}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise EdgeListError(f"line {lineno}: malformed token in {raw!r}") from None
        if u < 0 or v < 0:
            raise EdgeListError(f"line {lineno}: negative vertex id")
        if u > ID_LIMIT or v > ID_LIMIT:
            raise CapacityError(f"line {lineno}: vertex id exceeds {ID_LIMIT}")
        us.append(u)
        vs.append(v)
    return np.array(us, dtype=np.int64), np.array(vs, dtype=np.int64)


def _parse_fast(text):
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith(b"#")]
    if not lines:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    flat = np.array(b" ".join(lines).split(), dtype=np.int64)
    if len(flat) != 2 * len(lines):
        raise EdgeListError("token count mismatch")
    pairs = flat.reshape(-1, 2)
    if pairs.min() < 0 or pairs.max() > ID_LIMIT:
        raise EdgeListError("id out of range")
    return pairs[:, 0], pairs[:, 1]


def load_edge_list(source, directed: bool = False) -> Graph:
    """Read whitespace-separated ``u v`` pairs into a canonical CSR.

    ``source`` may be a path, bytes, or a binary/text stream.  Lines starting
    with ``#`` are comments.  Input ids are compacted to dense 0-based ids in
    ascending order; ``Graph.ids`` maps each dense id back to the input id.
    """
    text = _open_text(source)
    try:
        u, v = _parse_fast(text)
    except (ValueError, OverflowError):
        u, v = _parse_slow(text)  # raises with a line number
    ids, inverse = np.unique(np.concatenate([u, v]), return_inverse=True)
    m = len(u)
    return Graph.from_edges(len(ids), inverse[:m], inverse[m:], directed, ids=ids)


def write_edge_list(g: Graph, target, original_ids: bool = False):
    """Write one ``u v`` line per edge (undirected edges once)."""
    edges = g.edge_array()
    if original_ids and g.ids is not None:
        edges = g.ids[edges]
    buf = io.StringIO()
    np.savetxt(buf, edges, fmt="%d")
    data = buf.getvalue()
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            fh.write(data)
    else:
        target.write(data)


def save_csr(g: Graph, path):
    """Binary cache: ``GCSR``, u32 version, u64 |V|, u64 |E| slots, offsets, neighbors."""
    with open(path, "wb") as fh:
        fh.write(GCSR_MAGIC)
        fh.write(struct.pack("<IQQ", GCSR_VERSION, g.vertex_count, g.num_slots))
        fh.write(g.offsets.astype("<u8").tobytes())
        fh.write(g.neighbors.astype("<u4").tobytes())


def load_csr(path, directed: bool = False) -> Graph:
    with open(path, "rb") as fh:
        if fh.read(4) != GCSR_MAGIC:
            raise ValueError(f"{path}: not a GCSR file")
        version, n, m = struct.unpack("<IQQ", fh.read(20))
        if version != GCSR_VERSION:
            raise ValueError(f"{path}: unsupported GCSR version {version}")
        offsets = np.frombuffer(fh.read(8 * (n + 1)), dtype="<u8").astype(np.int64)
        neighbors = np.frombuffer(fh.read(4 * m), dtype="<u4").astype(np.int32)
    if len(offsets) != n + 1 or len(neighbors) != m:
        raise ValueError(f"{path}: truncated GCSR file")
    return Graph(offsets, neighbors, directed)


@dataclass
class LinkPredSplit:
    """Train graph plus held-out positive and negative pairs.

    Pairs are expressed in the train graph's vertex ids; ``train_vertices``
    maps those ids back to ids of the graph that was split.
    """

    train: Graph
    test_pos: np.ndarray
    test_neg: np.ndarray
    train_vertices: np.ndarray


def edge_keys(edges, n, directed):
    u, v = edges[:, 0], edges[:, 1]
    if not directed:
        u, v = np.minimum(u, v), np.maximum(u, v)
    return u * n + v


def sample_non_edges(n, count, forbidden_keys, rng, directed=False, exclude=None):
    """Draw ``count`` distinct vertex pairs (u != v) whose keys are not forbidden.

    ``forbidden_keys`` must be sorted; keys are ``u * n + v`` with u < v for
    undirected graphs.  ``exclude`` holds additional sorted keys to avoid.
    """
    total_pairs = n * (n - 1) if directed else n * (n - 1) // 2
    if count > total_pairs - len(forbidden_keys):
        raise SplitError("not enough non-edges to sample from")
    chosen = np.empty(0, dtype=np.int64)
    stalls = 0
    while len(chosen) < count:
        if stalls > 64:
            raise SplitError("could not find enough admissible non-edges")
        need = count - len(chosen)
        u = rng.integers(0, n, size=2 * need + 16)
        v = rng.integers(0, n, size=2 * need + 16)
        ok = u != v
        u, v = u[ok], v[ok]
        if not directed:
            u, v = np.minimum(u, v), np.maximum(u, v)
        keys = u * n + v
        for blocked in (forbidden_keys, exclude):
            if blocked is not None and len(blocked):
                pos = np.minimum(np.searchsorted(blocked, keys), len(blocked) - 1)
                keys = keys[blocked[pos] != keys]
        # keep first occurrences, in draw order, that are new
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        keys = keys[~np.isin(keys, chosen)]
        stalls = stalls + 1 if len(keys) == 0 else 0
        chosen = np.concatenate([chosen, keys[:need]])
    return np.stack([chosen // n, chosen % n], axis=1)


def split_link_pred(g: Graph, test_fraction: float, seed: int) -> LinkPredSplit:
    """Hold out a random fraction of edges for link prediction.

    Isolated vertices of the remaining train graph are removed, test edges
    touching a removed vertex are discarded, and as many negative pairs as
    surviving positives are drawn uniformly from the non-edges of ``g`` (fewer,
    with a warning, when the graph has too few non-edges).
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    edges = g.edge_array()
    m = len(edges)
    n_test = int(np.floor(test_fraction * m + 0.5))
    if n_test >= m:
        raise SplitError("graph too small to keep any train edge")
    perm = rng.permutation(m)
    test, train = edges[perm[:n_test]], edges[perm[n_test:]]

    n = g.vertex_count
    present = np.zeros(n, dtype=bool)
    present[train.ravel()] = True
    train_vertices = np.flatnonzero(present)
    relabel = np.full(n, -1, dtype=np.int64)
    relabel[train_vertices] = np.arange(len(train_vertices))
    ids = g.ids[train_vertices] if g.ids is not None else train_vertices
    train_graph = Graph.from_edges(len(train_vertices), relabel[train[:, 0]],
                                   relabel[train[:, 1]], g.directed, ids=ids)

    keep = present[test[:, 0]] & present[test[:, 1]]
    test_pos = relabel[test[keep]]

    all_keys = np.sort(edge_keys(relabel[edges[present[edges[:, 0]] & present[edges[:, 1]]]],
                                  len(train_vertices), g.directed))
    nt = len(train_vertices)
    room = (nt * (nt - 1) if g.directed else nt * (nt - 1) // 2) - len(all_keys)
    want = len(test_pos)
    if room < want:
        warnings.warn(f"only {room} non-edges available for {want} test positives")
        want = room
    test_neg = sample_non_edges(nt, want, all_keys, rng, g.directed)
    return LinkPredSplit(train_graph, test_pos, test_neg, train_vertices)
