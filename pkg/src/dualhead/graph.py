"""Skeleton connectivity and multi-scale normalized adjacency matrices."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, GraphError


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.num_joints < 1:
            raise GraphError(f"num_joints must be positive, got {self.num_joints}")
        clean = set()
        for i, j in self.edges:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise GraphError(f"edge ({i}, {j}) out of range for {self.num_joints} joints")
            if i == j:
                raise GraphError(f"self-edge ({i}, {i}) not allowed; self-loops are added on normalization")
            clean.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    def permuted(self, perm) -> "SkeletonGraph":
        """Relabel joints so that old joint ``perm[k]`` becomes joint ``k``."""
        inv = np.argsort(perm)
        return SkeletonGraph(self.num_joints, tuple((int(inv[i]), int(inv[j])) for i, j in self.edges))


@dataclass
class MultiScaleAdjacency:
    K: int
    matrices: list[np.ndarray] = field(default_factory=list)

    def stacked(self) -> np.ndarray:
        return np.stack(self.matrices)


@dataclass
class WindowAdjacency:
    tau: int
    base: MultiScaleAdjacency

    def center_rows(self) -> np.ndarray:
        """(K+1, N, tau*N): rows of the stacked graph belonging to the centre frame."""
        full = self.base.stacked()
        n = full.shape[1] // self.tau
        c = self.tau // 2
        return np.ascontiguousarray(full[:, c * n:(c + 1) * n, :])


def adjacency_from_edges(g: SkeletonGraph) -> np.ndarray:
    A = np.zeros((g.num_joints, g.num_joints))
    for i, j in g.edges:
        A[i, j] = A[j, i] = 1.0
    return A


def hop_distances(A: np.ndarray) -> np.ndarray:
    """All-pairs shortest-path lengths by BFS; unreachable pairs are -1."""
    n = A.shape[0]
    nbrs = [np.flatnonzero(A[i]) for i in range(n)]
    dist = np.full((n, n), -1, dtype=np.int64)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in nbrs[u]:
                if dist[src, v] < 0:
                    dist[src, v] = dist[src, u] + 1
                    queue.append(v)
    return dist


def k_scale_adjacency(A: np.ndarray, k: int) -> np.ndarray:
    """1 where the shortest-path distance is exactly ``k`` (so k=0 gives I)."""
    if k < 0:
        raise ConfigError(f"scale must be non-negative, got {k}")
    return (hop_distances(A) == k).astype(np.float64)


def normalize(A_k: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    A_hat = A_k + np.eye(A_k.shape[0])
    d = A_hat.sum(axis=1) ** -0.5
    return d[:, None] * A_hat * d[None, :]


def multiscale(A: np.ndarray, K: int) -> MultiScaleAdjacency:
    if K < 0:
        raise ConfigError(f"number of scales K must be >= 0, got {K}")
    dist = hop_distances(A)
    mats = [normalize((dist == k).astype(np.float64)) for k in range(K + 1)]
    return MultiScaleAdjacency(K, mats)


def build_multiscale(g: SkeletonGraph, K: int) -> MultiScaleAdjacency:
    return multiscale(adjacency_from_edges(g), K)


def build_window_adjacency(g: SkeletonGraph, tau: int, K: int) -> WindowAdjacency:
    """Multi-scale adjacency over the tau*N-node graph of a tau-frame window.

    Node ``p*N + i`` (joint i at slot p) links to ``q*N + j`` when i == j or
    (i, j) is a skeleton edge, for every pair of slots.
    """
    if tau < 1 or tau % 2 == 0:
        raise ConfigError(f"window length tau must be a positive odd integer, got {tau}")
    A_self = adjacency_from_edges(g) + np.eye(g.num_joints)
    tiled = np.kron(np.ones((tau, tau)), A_self)
    np.fill_diagonal(tiled, 0.0)
    return WindowAdjacency(tau, multiscale(tiled, K))


def bone_parents(g: SkeletonGraph, root: int = 0) -> np.ndarray:
    """Parent of every joint in the BFS tree rooted at ``root``; the root maps to itself."""
    if not 0 <= root < g.num_joints:
        raise GraphError(f"root {root} out of range for {g.num_joints} joints")
    dist = hop_distances(adjacency_from_edges(g))
    if np.any(dist[root] < 0):
        raise GraphError("skeleton graph is not connected; cannot root a bone tree")
    A = adjacency_from_edges(g)
    parents = np.full(g.num_joints, -1, dtype=np.int64)
    parents[root] = root
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(A[u]):
            if parents[v] < 0:
                parents[v] = u
                queue.append(v)
    return parents


# ---------------------------------------------------------------------------
# edge-list files

def parse_edge_list(text: str, source: str = "<string>") -> SkeletonGraph:
    """Parse ``N <count>`` followed by one ``i j`` pair per line; ``#`` starts a comment."""
    num_joints = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if num_joints is None:
            if len(parts) != 2 or parts[0] != "N":
                raise FormatError(f"{source}:{lineno}: first entry must be 'N <num_joints>'")
            num_joints = _int(parts[1], source, lineno)
            continue
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected 'i j', got {line!r}")
        edges.append((_int(parts[0], source, lineno), _int(parts[1], source, lineno)))
    if num_joints is None:
        raise FormatError(f"{source}: missing 'N <num_joints>' header")
    return SkeletonGraph(num_joints, tuple(edges))


def _int(tok, source, lineno):
    try:
        return int(tok)
    except ValueError:
        raise FormatError(f"{source}:{lineno}: not an integer: {tok!r}") from None


def load_edge_list(path) -> SkeletonGraph:
    path = Path(path)
    return parse_edge_list(path.read_text(), str(path))


def format_edge_list(g: SkeletonGraph, comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    lines.append(f"N {g.num_joints}")
    lines += [f"{i} {j}" for i, j in g.edges]
    return "\n".join(lines) + "\n"


BUNDLED = ("ntu25", "synthetic11")


def bundled_skeleton(name: str) -> SkeletonGraph:
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled skeleton {name!r}; choose from {BUNDLED}")
    text = resources.files("dualhead").joinpath("data").joinpath(f"{name}.edges").read_text()
    return parse_edge_list(text, f"{name}.edges")


def resolve_skeleton(spec: str) -> SkeletonGraph:
    """A bundled skeleton name or a path to an edge-list file."""
    return bundled_skeleton(spec) if spec in BUNDLED else load_edge_list(spec)
