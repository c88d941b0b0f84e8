"""Multi-component D2D graphs, Metropolis-Hastings mixing and mixing parameters.

Devices are numbered ``0..n-1`` and component ``c`` owns a contiguous block of
indices. Edges never cross components, so every matrix built here is
block-diagonal with respect to that partition.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum

import numpy as np

from .errors import DegenerateBlock, InvalidComponentSize

__all__ = [
    "TopologyKind",
    "Topology",
    "MixingMatrix",
    "ComponentProjector",
    "MixingParam",
    "build_topology",
    "metropolis_weights",
    "component_projector",
    "spectral_mixing_parameter",
    "resample_topology",
    "expected_mixing_parameter",
    "grid_shape",
]

_MAX_REGULAR_ATTEMPTS = 100


class TopologyKind(str, Enum):
    RING = "ring"
    GRID = "grid"
    COMPLETE = "complete"
    RANDOM_REGULAR = "random_regular"

    @classmethod
    def parse(cls, value: "str | TopologyKind") -> "TopologyKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"grid2d": "grid", "randomregular": "random_regular", "regular": "random_regular"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown topology kind {value!r}") from None


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Topology:
    """Disjoint connected components with per-component undirected edge lists.

    ``edges[c]`` holds pairs ``(i, j)`` with ``i < j`` in global device indices.
    """

    n: int
    components: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[tuple[int, int], ...], ...]
    kind: TopologyKind
    degree: int | None = None

    def __post_init__(self):
        seen = sorted(i for comp in self.components for i in comp)
        if seen != list(range(self.n)):
            raise ValueError("components must partition {0, ..., n-1}")
        if len(self.edges) != len(self.components):
            raise ValueError("need one edge list per component")
        for comp, comp_edges in zip(self.components, self.edges):
            members = set(comp)
            for i, j in comp_edges:
                if i not in members or j not in members:
                    raise ValueError(f"edge ({i}, {j}) leaves its component")
                if i == j:
                    raise ValueError(f"self-loop at {i}")
            if not _is_connected(comp, comp_edges):
                raise ValueError(f"component {comp[:5]}... is not connected")

    @property
    def component_sizes(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.components)

    @property
    def num_components(self) -> int:
        return len(self.components)

    def all_edges(self) -> list[tuple[int, int]]:
        return [e for comp_edges in self.edges for e in comp_edges]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.all_edges():
            deg[i] += 1
            deg[j] += 1
        return deg

    def component_of(self) -> np.ndarray:
        """Component label of every device."""
        labels = np.empty(self.n, dtype=int)
        for c, comp in enumerate(self.components):
            labels[list(comp)] = c
        return labels


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic, block-diagonal D2D matrix ``W``."""

    entries: np.ndarray
    topology: Topology

    def block(self, c: int) -> np.ndarray:
        idx = list(self.topology.components[c])
        return self.entries[np.ix_(idx, idx)]

    @cached_property
    def _edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        e = np.array(self.topology.all_edges(), dtype=int).reshape(-1, 2)
        return e[:, 0], e[:, 1], self.entries[e[:, 0], e[:, 1]]

    def mix(self, X: np.ndarray) -> np.ndarray:
        """Return ``X @ W``.

        Evaluated as ``x_i + sum_j w_ij (x_j - x_i)`` over edges so that a
        consensus matrix (identical columns) is an exact fixed point.
        """
        I, J, w = self._edge_arrays
        flow = (X[:, J] - X[:, I]) * w
        out = X.T.copy()
        np.add.at(out, I, flow.T)
        np.subtract.at(out, J, flow.T)
        return out.T.copy()


@dataclass(frozen=True)
class ComponentProjector:
    """Component projector ``Pi_C`` plus the global averaging projector ``Pi``."""

    entries: np.ndarray
    global_projector: np.ndarray
    topology: Topology


@dataclass(frozen=True)
class MixingParam:
    p: float
    per_component: tuple[float, ...] = field(default_factory=tuple)


def _is_connected(comp, comp_edges) -> bool:
    if len(comp) <= 1:
        return True
    adj: dict[int, list[int]] = {i: [] for i in comp}
    for i, j in comp_edges:
        adj[i].append(j)
        adj[j].append(i)
    start = comp[0]
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(comp)


def grid_shape(m: int) -> tuple[int, int]:
    """Most-square factorization ``r x s`` of ``m`` with ``r <= s``."""
    r = int(math.isqrt(m))
    while m % r:
        r -= 1
    if r == 1 and m > 3:
        raise InvalidComponentSize(f"grid needs a composite component size, got prime {m}")
    return r, m // r


def _ring_edges(m: int) -> list[tuple[int, int]]:
    if m < 3:
        raise InvalidComponentSize(f"ring needs at least 3 devices, got {m}")
    return [(k, k + 1) for k in range(m - 1)] + [(0, m - 1)]


def _grid_edges(m: int) -> list[tuple[int, int]]:
    r, s = grid_shape(m)
    edges = []
    for a in range(r):
        for b in range(s):
            k = a * s + b
            if b + 1 < s:
                edges.append((k, k + 1))
            if a + 1 < r:
                edges.append((k, k + s))
    return edges


def _complete_edges(m: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(m) for b in range(a + 1, m)]


def _try_pairing(m: int, degree: int, rng: np.random.Generator) -> list[tuple[int, int]] | None:
    # Pairing model; a point is only matched with a point whose vertex is
    # neither itself nor an existing neighbour. Dead ends restart the attempt.
    stubs = [v for v in range(m) for _ in range(degree)]
    edges: set[tuple[int, int]] = set()
    while stubs:
        perm = rng.permutation(len(stubs))
        stubs = [stubs[k] for k in perm]
        leftover = []
        it = iter(range(0, len(stubs) - 1, 2))
        for k in it:
            u, v = stubs[k], stubs[k + 1]
            e = (min(u, v), max(u, v))
            if u == v or e in edges:
                leftover.extend((u, v))
            else:
                edges.add(e)
        if len(stubs) % 2:
            leftover.append(stubs[-1])
        if len(leftover) == len(stubs):
            # no progress: check whether any legal pair is left at all
            if not any(
                a != b and (min(a, b), max(a, b)) not in edges
                for x, a in enumerate(leftover)
                for b in leftover[x + 1 :]
            ):
                return None
        stubs = leftover
    return sorted(edges)


def _random_regular_edges(m: int, degree: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    if m == 1 and degree == 0:
        return []
    if degree >= m or (m * degree) % 2 or degree < 1:
        raise InvalidComponentSize(
            f"no {degree}-regular graph on {m} vertices (need 1 <= degree < n_c, n_c*degree even)"
        )
    comp = tuple(range(m))
    for _ in range(_MAX_REGULAR_ATTEMPTS):
        edges = _try_pairing(m, degree, rng)
        if edges is not None and _is_connected(comp, edges):
            return edges
    raise InvalidComponentSize(
        f"failed to draw a connected {degree}-regular graph on {m} vertices "
        f"in {_MAX_REGULAR_ATTEMPTS} attempts"
    )


def _component_rng(seed: int, c: int, round_: int | None) -> np.random.Generator:
    key = [int(seed), c] if round_ is None else [int(seed), c, int(round_), 1]
    return np.random.default_rng(key)


def build_topology(kind, component_sizes, seed: int = 0, degree: int | None = None) -> Topology:
    """Build one connected graph of ``kind`` on every component.

    Parameters
    ----------
    kind : TopologyKind or str
        ``ring``, ``grid``, ``complete`` or ``random_regular``.
    component_sizes : sequence of int
        Sizes ``n_c``; component ``c`` gets a contiguous index block.
    seed : int
        Only used by ``random_regular``.
    degree : int, optional
        Degree for ``random_regular`` (default 4).
    """
    kind = TopologyKind.parse(kind)
    sizes = [int(s) for s in component_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise InvalidComponentSize(f"component sizes must be positive, got {sizes}")
    if kind is TopologyKind.RANDOM_REGULAR:
        degree = 4 if degree is None else int(degree)
    else:
        degree = None
    return _realize(kind, sizes, seed, degree, round_=None)


def _realize(kind, sizes, seed, degree, round_) -> Topology:
    components, edges = [], []
    offset = 0
    for c, m in enumerate(sizes):
        if kind is TopologyKind.RING:
            local = _ring_edges(m)
        elif kind is TopologyKind.GRID:
            local = _grid_edges(m)
        elif kind is TopologyKind.COMPLETE:
            local = _complete_edges(m)
        else:
            local = _random_regular_edges(m, degree, _component_rng(seed, c, round_))
        components.append(tuple(range(offset, offset + m)))
        edges.append(tuple(sorted((offset + min(a, b), offset + max(a, b)) for a, b in local)))
        offset += m
    return Topology(
        n=offset, components=tuple(components), edges=tuple(edges), kind=kind, degree=degree
    )


def resample_topology(t: Topology, round_: int, seed: int) -> Topology:
    """Fresh edge realization for time-varying graphs.

    Only random regular graphs are resampled; fixed kinds come back unchanged.
    The result depends only on ``(seed, round_)``.
    """
    if t.kind is not TopologyKind.RANDOM_REGULAR:
        return t
    return _realize(t.kind, list(t.component_sizes), seed, t.degree, round_=round_)


def metropolis_weights(t: Topology) -> MixingMatrix:
    """Metropolis-Hastings weights ``w_ij = min(1/(deg_i+1), 1/(deg_j+1))``."""
    deg = t.degrees()
    W = np.zeros((t.n, t.n))
    for i, j in t.all_edges():
        w = min(1.0 / (deg[i] + 1), 1.0 / (deg[j] + 1))
        W[i, j] = W[j, i] = w
    W[np.diag_indices(t.n)] = 1.0 - W.sum(axis=1)
    return MixingMatrix(entries=_readonly(W), topology=t)


def component_projector(t: Topology) -> ComponentProjector:
    P = np.zeros((t.n, t.n))
    for comp in t.components:
        idx = list(comp)
        P[np.ix_(idx, idx)] = 1.0 / len(comp)
    Pi = np.full((t.n, t.n), 1.0 / t.n)
    return ComponentProjector(entries=_readonly(P), global_projector=_readonly(Pi), topology=t)


def _second_eigenvalue_power(B: np.ndarray, tol: float, max_iter: int, seed: int = 0) -> float:
    # B = W_c^T W_c is PSD with top eigenpair (1, ones/sqrt(m)); deflate it.
    m = B.shape[0]
    u = np.full(m, 1.0 / math.sqrt(m))
    Bd = B - np.outer(u, u)
    v = np.random.default_rng(seed).standard_normal(m)
    v -= u * (u @ v)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = Bd @ v
        lam = float(v @ w)
        if np.linalg.norm(w - lam * v) < tol:
            break
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        v -= u * (u @ v)
        v /= np.linalg.norm(v)
    return lam


def spectral_mixing_parameter(
    W: MixingMatrix,
    method: str = "dense",
    tol: float = 1e-9,
    max_iter: int = 10_000,
    strict: bool = False,
) -> MixingParam:
    """Per-component ``p_c = 1 - lambda_2(W_c^T W_c)`` and their weighted mean.

    The aggregate is ``sum_c p_c (n_c - 1) / sum_c (n_c - 1)``. Singleton
    components get ``p_c = 1``; their weight is zero anyway.

    ``method`` is ``"dense"`` (symmetric eigensolver) or ``"power"``
    (power iteration on the deflated block). With ``strict=True`` a singleton
    component raises :class:`DegenerateBlock` instead of getting ``p_c = 1``.
    """
    if method not in ("dense", "power"):
        raise ValueError(f"unknown eigenvalue method {method!r}")
    per = []
    for c, comp in enumerate(W.topology.components):
        m = len(comp)
        if m == 1:
            if strict:
                raise DegenerateBlock(f"component {c} is a singleton")
            per.append(1.0)
            continue
        Wc = W.block(c)
        B = Wc.T @ Wc
        if method == "dense":
            lam2 = float(np.linalg.eigvalsh(B)[-2])
        else:
            lam2 = _second_eigenvalue_power(B, tol, max_iter)
        if abs(lam2) < 1e-12:
            lam2 = 0.0
        per.append(1.0 - lam2)
    weights = [len(comp) - 1 for comp in W.topology.components]
    total = sum(weights)
    p = sum(pc * w for pc, w in zip(per, weights)) / total if total else 1.0
    return MixingParam(p=p, per_component=tuple(per))


def expected_mixing_parameter(t: Topology, seed: int, rounds: int = 200) -> MixingParam:
    """Mixing parameter of a randomly switching topology.

    Monte-Carlo estimate of ``1 - lambda_2(E[W_c^T W_c])`` per component over
    ``rounds`` realizations from :func:`resample_topology`.
    """
    acc = np.zeros((t.n, t.n))
    for r in range(rounds):
        Wr = metropolis_weights(resample_topology(t, r, seed)).entries
        acc += Wr.T @ Wr
    acc /= rounds
    per = []
    for comp in t.components:
        if len(comp) == 1:
            per.append(1.0)
            continue
        idx = list(comp)
        lam2 = float(np.linalg.eigvalsh(acc[np.ix_(idx, idx)])[-2])
        per.append(1.0 - max(lam2, 0.0))
    weights = [len(comp) - 1 for comp in t.components]
    total = sum(weights)
    p = sum(pc * w for pc, w in zip(per, weights)) / total if total else 1.0
    return MixingParam(p=p, per_component=tuple(per))
