"""Similarity search over embedded datasets.

Embeddings are augmented by two coordinates so that plain squared Euclidean
distance reproduces the full match distance including both adjustments:

    repository vector  [h, sqrt(g), 0]
    query vector       [h, 0, sqrt(g)]

    ||r - q||^2 = ||h_r - h_q||^2 + g_r + g_q

The approximate index is a layered navigable proximity graph: each node gets
a geometric random level, long-range links live on upper layers, and search
greedily descends with a beam of width ``ef`` at the bottom. Exact search by
full scan is always available as the reference. Distance evaluations are
counted per query so the cost of the approximation is observable.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .core import DatasetEmbedding
from .errors import FormatError, InvalidArgument, UnsupportedVersion

__all__ = [
    "augment_repository",
    "augment_query",
    "RepositoryIndex",
    "INDEX_MAGIC",
]

INDEX_MAGIC = b"VLIX"
INDEX_VERSION = 1
DEFAULT_M = 16
DEFAULT_EF_CONSTRUCTION = 100
DEFAULT_EF = 64


def augment_repository(e: DatasetEmbedding) -> np.ndarray:
    """Embedding as stored in the index: adjustment in the first slack slot."""
    return np.concatenate([e.vector, [math.sqrt(e.adjustment)], [0.0]])


def augment_query(e: DatasetEmbedding) -> np.ndarray:
    """Embedding as used for lookups: adjustment in the second slack slot."""
    return np.concatenate([e.vector, [0.0], [math.sqrt(e.adjustment)]])


class RepositoryIndex:
    """Approximate nearest-neighbor index over augmented embeddings.

    Ids are arbitrary strings; ranked results are (id, squared distance)
    with exact ties broken by id. Construction is deterministic for a fixed
    seed and insertion order, and a saved index reloads byte-identically.
    """

    def __init__(self, embedding_dim: int, m: int = DEFAULT_M,
                 ef_construction: int = DEFAULT_EF_CONSTRUCTION, seed: int = 0):
        if embedding_dim < 1:
            raise InvalidArgument("embedding_dim must be positive")
        if m < 2:
            raise InvalidArgument("max degree m must be at least 2")
        self.embedding_dim = int(embedding_dim)
        self.dim = self.embedding_dim + 2
        self.m = int(m)
        self.ef_construction = int(ef_construction)
        self.seed = int(seed)
        self.ids: list[str] = []
        self._id_pos: dict[str, int] = {}
        self._buf = np.empty((16, self.dim), dtype=np.float64)
        self._norms = np.empty(16, dtype=np.float64)
        self._n = 0
        self.levels: list[int] = []
        # graph[node][level] -> list of neighbor positions
        self.graph: list[list[list[int]]] = []
        self.entry_point = -1
        self.max_level = -1
        self.last_dist_evals = 0
        self.build_dist_evals = 0
        self._ml = 1.0 / math.log(self.m)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def vectors(self) -> np.ndarray:
        return self._buf[:self._n]

    def _append_vector(self, vec: np.ndarray) -> None:
        if self._n == self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self.dim), dtype=np.float64)
            grown[:self._n] = self._buf[:self._n]
            self._buf = grown
            norms = np.empty(2 * self._norms.shape[0], dtype=np.float64)
            norms[:self._n] = self._norms[:self._n]
            self._norms = norms
        self._buf[self._n] = vec
        self._norms[self._n] = vec @ vec
        self._n += 1

    # -- distance bookkeeping

    def _dists_to(self, vec: np.ndarray, positions) -> np.ndarray:
        # ‖x−q‖² = ‖x‖² − 2x·q + ‖q‖² with cached row norms; one gemv instead
        # of materializing the difference rows. Cancellation can leave tiny
        # negatives for (near-)duplicate vectors, so clamp at zero.
        self._evals += len(positions)
        d = self._norms[positions] - 2.0 * (self._buf[positions] @ vec)
        d += vec @ vec
        return np.maximum(d, 0.0, out=d)

    # -- construction

    def _draw_level(self, position: int) -> int:
        u = np.random.default_rng([self.seed, position]).random()
        return int(-math.log(u) * self._ml)

    def _select_neighbors(self, vec: np.ndarray, candidates: list[tuple[float, int]],
                          m: int) -> list[int]:
        """Diversity-preserving neighbor selection.

        Candidates (sorted by distance to ``vec``) are kept only when closer
        to ``vec`` than to every already-kept neighbor, which stops clusters
        from absorbing the whole degree budget; leftovers fill any remaining
        slots by distance.
        """

        # one pairwise-distance matrix over the candidates, then a pure scalar
        # keep/skip pass; min distance to the kept set is maintained per row
        n_c = len(candidates)
        positions = [pos for _, pos in candidates]
        rows = self._buf[positions]
        gram = rows @ rows.T
        norms = self._norms[positions]
        pair = norms[:, None] - 2.0 * gram + norms[None, :]
        self._evals += n_c * (n_c - 1) // 2
        min_to_kept = [math.inf] * n_c
        kept: list[int] = []
        skipped: list[int] = []
        for i, (dist, pos) in enumerate(candidates):
            if len(kept) >= m:
                break
            if min_to_kept[i] < dist:
                skipped.append(pos)
                continue
            kept.append(pos)
            row = pair[i]
            for j in range(i + 1, n_c):
                if row[j] < min_to_kept[j]:
                    min_to_kept[j] = row[j]
        for pos in skipped:
            if len(kept) >= m:
                break
            kept.append(pos)
        return kept

    def _search_layer(self, vec: np.ndarray, entry: list[int], ef: int,
                      level: int) -> list[tuple[float, int]]:
        """Beam search on one layer; returns up to ``ef`` (distance, position)
        pairs sorted ascending."""
        dists = self._dists_to(vec, entry)
        visited = set(entry)
        candidates = sorted(zip(dists.tolist(), entry))
        best = [(-d, p) for d, p in candidates]
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)
        frontier = list(candidates)
        heapq.heapify(frontier)
        while frontier:
            d_c, c = heapq.heappop(frontier)
            worst = -best[0][0]
            if d_c > worst and len(best) >= ef:
                break
            fresh = [n for n in self.graph[c][level] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            d_fresh = self._dists_to(vec, fresh)
            for d_n, n in sorted(zip(d_fresh.tolist(), fresh)):
                worst = -best[0][0]
                if len(best) < ef or d_n < worst:
                    heapq.heappush(best, (-d_n, n))
                    if len(best) > ef:
                        heapq.heappop(best)
                    heapq.heappush(frontier, (d_n, n))
        return sorted((-nd, p) for nd, p in best)

    def add(self, embedding: DatasetEmbedding, dataset_id: str) -> None:
        """Insert one repository embedding under ``dataset_id``."""
        if dataset_id in self._id_pos:
            raise InvalidArgument(f"dataset id {dataset_id!r} already indexed")
        vec = augment_repository(embedding)
        if vec.shape[0] != self.dim:
            raise InvalidArgument(f"embedding dim {embedding.dim} does not match index ({self.embedding_dim})")
        self._evals = 0
        position = len(self.ids)
        level = self._draw_level(position)
        self.ids.append(dataset_id)
        self._id_pos[dataset_id] = position
        self._append_vector(vec)
        self.levels.append(level)
        self.graph.append([[] for _ in range(level + 1)])

        if self.entry_point < 0:
            self.entry_point = position
            self.max_level = level
            self.build_dist_evals += self._evals
            return

        entry = [self.entry_point]
        for lev in range(self.max_level, level, -1):
            nearest = self._search_layer(vec, entry, 1, lev)
            entry = [nearest[0][1]]
        for lev in range(min(level, self.max_level), -1, -1):
            found = self._search_layer(vec, entry, self.ef_construction, lev)
            neighbors = self._select_neighbors(vec, found, self.m)
            self.graph[position][lev] = list(neighbors)
            for n in neighbors:
                links = self.graph[n][lev]
                links.append(position)
                if len(links) > self.m:
                    d_links = self._dists_to(self.vectors[n], links)
                    ranked = sorted(zip(d_links.tolist(), links))
                    self.graph[n][lev] = self._select_neighbors(self.vectors[n], ranked, self.m)
            entry = [p for _, p in found]
        if level > self.max_level:
            self.entry_point = position
            self.max_level = level
        self.build_dist_evals += self._evals

    # -- queries

    def _ranked(self, positions, dists, k):
        order = sorted(zip(dists.tolist(), (self.ids[p] for p in positions)))
        return [(i, d) for d, i in order[:k]]

    def knn_exact(self, query: DatasetEmbedding, k: int) -> list[tuple[str, float]]:
        """Reference full scan: top-k by squared augmented distance, ties by id."""
        if k < 1:
            raise InvalidArgument("k must be positive")
        if not self.ids:
            return []
        self._evals = 0
        vec = augment_query(query)
        positions = list(range(len(self.ids)))
        dists = self._dists_to(vec, positions)
        self.last_dist_evals = self._evals
        return self._ranked(positions, dists, k)

    def knn(self, query: DatasetEmbedding, k: int, ef: int = DEFAULT_EF) -> list[tuple[str, float]]:
        """Approximate top-k. ``ef`` is the beam width; ef >= index size
        degenerates to the exact scan."""
        if k < 1:
            raise InvalidArgument("k must be positive")
        if ef < k:
            raise InvalidArgument(f"ef ({ef}) must be at least k ({k})")
        if not self.ids:
            return []
        if ef >= len(self.ids):
            return self.knn_exact(query, k)
        self._evals = 0
        vec = augment_query(query)
        entry = [self.entry_point]
        for lev in range(self.max_level, 0, -1):
            nearest = self._search_layer(vec, entry, 1, lev)
            entry = [nearest[0][1]]
        found = self._search_layer(vec, entry, ef, 0)
        self.last_dist_evals = self._evals
        positions = [p for _, p in found]
        dists = np.asarray([d for d, _ in found])
        return self._ranked(positions, dists, k)

    # -- persistence

    def save(self, path) -> None:
        """Serialize; identical indexes produce identical bytes."""
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            header = np.asarray([INDEX_VERSION, self.embedding_dim, self.m,
                                 self.ef_construction], dtype="<u4")
            fh.write(header.tobytes())
            fh.write(np.asarray([self.seed, len(self.ids), self.entry_point,
                                 self.max_level], dtype="<i8").tobytes())
            for dataset_id in self.ids:
                raw = dataset_id.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise InvalidArgument(f"dataset id too long: {dataset_id!r}")
                fh.write(np.asarray(len(raw), dtype="<u2").tobytes())
                fh.write(raw)
            fh.write(np.asarray(self.levels, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
            for node in self.graph:
                for links in node:
                    fh.write(np.asarray(len(links), dtype="<u4").tobytes())
                    fh.write(np.asarray(links, dtype="<u4").tobytes())

    @classmethod
    def load(cls, path) -> "RepositoryIndex":
        """Read an index back; truncated or alien files never yield a partial
        index."""
        with open(path, "rb") as fh:
            data = fh.read()
        view = memoryview(data)
        off = 0

        def take(n: int, what: str):
            nonlocal off
            if off + n > len(view):
                raise FormatError(f"index file truncated while reading {what}")
            chunk = view[off:off + n]
            off += n
            return chunk

        if bytes(take(4, "magic")) != INDEX_MAGIC:
            raise FormatError("not a repository index file")
        version, embedding_dim, m, ef_construction = np.frombuffer(take(16, "header"), dtype="<u4")
        if version != INDEX_VERSION:
            raise UnsupportedVersion(f"index version {int(version)} not supported")
        seed, count, entry_point, max_level = (int(x) for x in np.frombuffer(take(32, "header"), dtype="<i8"))
        idx = cls(int(embedding_dim), m=int(m), ef_construction=int(ef_construction), seed=seed)
        ids = []
        for i in range(count):
            n = int(np.frombuffer(take(2, f"id {i} length"), dtype="<u2")[0])
            ids.append(bytes(take(n, f"id {i}")).decode("utf-8"))
        levels = np.frombuffer(take(4 * count, "levels"), dtype="<u4").astype(int).tolist()
        vectors = np.frombuffer(take(8 * count * idx.dim, "vectors"), dtype="<f8")
        vectors = vectors.reshape(count, idx.dim).copy()
        graph = []
        for i in range(count):
            node = []
            for lev in range(levels[i] + 1):
                n = int(np.frombuffer(take(4, f"degree of node {i} level {lev}"), dtype="<u4")[0])
                links = np.frombuffer(take(4 * n, f"links of node {i} level {lev}"), dtype="<u4")
                node.append(links.astype(int).tolist())
            graph.append(node)
        if off != len(view):
            raise FormatError("trailing bytes after index payload")
        if len(set(ids)) != len(ids):
            raise FormatError("duplicate dataset ids in index file")
        idx.ids = ids
        idx._id_pos = {d: i for i, d in enumerate(ids)}
        idx._buf = vectors if count else np.empty((16, idx.dim), dtype=np.float64)
        # same op as _append_vector so reloaded indexes answer bit-identically
        idx._norms = (np.array([row @ row for row in vectors])
                      if count else np.empty(16, dtype=np.float64))
        idx._n = count
        idx.levels = levels
        idx.graph = graph
        idx.entry_point = entry_point
        idx.max_level = max_level
        return idx
