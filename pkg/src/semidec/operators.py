"""Server-round operators, device sampling and bias/disagreement errors.

The two server primitives differ only in who receives the aggregate of the
``K`` sampled models: the sampled devices themselves (S2S) or every device
(S2A). Both are available as dense matrices for inspection and are applied
structurally in the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, InvalidK
from .topology import ComponentProjector

__all__ = [
    "Primitive",
    "SampleSet",
    "ServerOperator",
    "ErrorSnapshot",
    "sample_devices",
    "s2s_matrix",
    "s2a_matrix",
    "server_operator",
    "apply_server_step",
    "disagreement_decomposed",
    "disagreement_sq",
    "expected_ratio_check",
    "theoretical_ratio",
]


class Primitive(str, Enum):
    S2S = "s2s"
    S2A = "s2a"

    @classmethod
    def parse(cls, value: "str | Primitive") -> "Primitive":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown primitive {value!r}; expected S2S or S2A") from None


@dataclass(frozen=True)
class SampleSet:
    """``K`` distinct device indices, stored sorted."""

    indices: tuple[int, ...]
    n: int

    @property
    def K(self) -> int:
        return len(self.indices)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[list(self.indices)] = True
        return m


@dataclass(frozen=True)
class ServerOperator:
    entries: np.ndarray
    primitive: Primitive
    sample: SampleSet


@dataclass(frozen=True)
class ErrorSnapshot:
    """Squared errors around one server step.

    ``bias_sq`` is the squared shift of the global average caused by the step.
    The disagreement terms describe the matrix after the step.
    """

    bias_sq: float
    disagreement_sq: float
    intra_sq: float
    inter_sq: float
    round: int = 0


def _check_K(n: int, K: int) -> None:
    if not 1 <= K <= n:
        raise InvalidK(f"K must satisfy 1 <= K <= n, got K={K}, n={n}")


def sample_devices(n: int, K: int, rng: np.random.Generator) -> SampleSet:
    """Draw ``K`` of ``n`` devices uniformly without replacement.

    Partial Fisher-Yates: only the first ``K`` swaps are performed.
    """
    _check_K(n, K)
    idx = np.arange(n)
    picks = rng.integers(np.arange(K), n)
    for k, j in enumerate(picks):
        idx[k], idx[j] = idx[j], idx[k]
    return SampleSet(indices=tuple(sorted(int(i) for i in idx[:K])), n=n)


def s2s_matrix(s: SampleSet, n: int | None = None) -> ServerOperator:
    """Sampled-to-sampled operator.

    ``1/K`` between sampled pairs, ``1`` on unsampled diagonal entries.
    """
    n = s.n if n is None else n
    if n != s.n:
        raise DimensionMismatch(f"sample drawn for n={s.n}, operator requested for n={n}")
    m = s.mask()
    M = np.zeros((n, n))
    M[np.ix_(m, m)] = 1.0 / s.K
    off = ~m
    M[off, off] = 1.0
    return ServerOperator(entries=M, primitive=Primitive.S2S, sample=s)


def s2a_matrix(s: SampleSet, n: int | None = None) -> ServerOperator:
    """Sampled-to-all operator: row ``i`` is ``1/K`` when ``i`` is sampled."""
    n = s.n if n is None else n
    if n != s.n:
        raise DimensionMismatch(f"sample drawn for n={s.n}, operator requested for n={n}")
    M = np.zeros((n, n))
    M[s.mask(), :] = 1.0 / s.K
    return ServerOperator(entries=M, primitive=Primitive.S2A, sample=s)


def server_operator(primitive, s: SampleSet) -> ServerOperator:
    primitive = Primitive.parse(primitive)
    return s2s_matrix(s) if primitive is Primitive.S2S else s2a_matrix(s)


def _sampled_mean(X: np.ndarray, idx: list[int]) -> np.ndarray:
    # Shifted mean: exact when the sampled columns coincide.
    ref = X[:, idx[0]]
    return ref + (X[:, idx] - ref[:, None]).mean(axis=1)


def _centered(X: np.ndarray) -> np.ndarray:
    # Shift by one column first so identical columns give exact zeros.
    Y = X - X[:, :1]
    return Y - Y.mean(axis=1, keepdims=True)


def disagreement_sq(X: np.ndarray) -> float:
    """``||X (I - Pi)||_F^2``."""
    return float(np.sum(_centered(X) ** 2))


def disagreement_decomposed(
    X: np.ndarray, proj: ComponentProjector | None = None
) -> tuple[float, float, float]:
    """Split the disagreement into intra- and inter-component parts.

    Returns ``(total, intra, inter)`` with ``total = ||X(I - Pi)||^2``,
    ``intra = ||X(I - Pi_C)||^2`` and ``inter = ||X(Pi_C - Pi)||^2``. Without a
    projector the network is treated as a single component.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[1]
    X = X - X[:, :1]
    xbar = X.mean(axis=1, keepdims=True)
    total = float(np.sum((X - xbar) ** 2))
    if proj is None:
        return total, total, 0.0
    if proj.topology.n != n:
        raise DimensionMismatch(f"X has {n} columns, projector is for n={proj.topology.n}")
    comp_means = np.empty_like(X)
    for comp in proj.topology.components:
        idx = list(comp)
        comp_means[:, idx] = X[:, idx].mean(axis=1, keepdims=True)
    intra = float(np.sum((X - comp_means) ** 2))
    inter = float(np.sum((comp_means - xbar) ** 2))
    return total, intra, inter


def apply_server_step(
    X: np.ndarray,
    op: ServerOperator,
    proj: ComponentProjector | None = None,
    round_: int = 0,
) -> tuple[np.ndarray, ErrorSnapshot]:
    """Return ``X @ op.entries`` and the error snapshot of the step.

    The product is evaluated structurally: the sampled average replaces the
    sampled columns (S2S) or every column (S2A). This keeps consensus an exact
    fixed point and makes both primitives bitwise equal at ``K = n``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != op.sample.n:
        raise DimensionMismatch(f"X has shape {X.shape}, operator is for n={op.sample.n}")
    idx = list(op.sample.indices)
    m = _sampled_mean(X, idx)
    out = X.copy()
    if op.primitive is Primitive.S2S and op.sample.K < op.sample.n:
        out[:, idx] = m[:, None]
    else:
        out[:, :] = m[:, None]
    before = X.mean(axis=1)
    after = out.mean(axis=1)
    bias = float(X.shape[1] * np.sum((after - before) ** 2))
    total, intra, inter = disagreement_decomposed(out, proj)
    return out, ErrorSnapshot(
        bias_sq=bias, disagreement_sq=total, intra_sq=intra, inter_sq=inter, round=round_
    )


def theoretical_ratio(primitive, n: int, K: int) -> float:
    """Expected post/pre disagreement (S2S) or bias/pre disagreement (S2A)."""
    primitive = Primitive.parse(primitive)
    _check_K(n, K)
    if primitive is Primitive.S2S:
        return (n - K) / (n - 1)
    return (n - K) / (K * (n - 1))


def expected_ratio_check(
    primitive,
    n: int,
    K: int,
    trials: int,
    rng: np.random.Generator,
    d: int = 8,
) -> float:
    """Monte-Carlo estimate of the error ratio of one server step.

    A single probe ``X`` (standard normal, ``d x n``) is drawn first and kept
    fixed; only the sample set is redrawn in each trial.
    """
    primitive = Primitive.parse(primitive)
    _check_K(n, K)
    if n < 2:
        raise InvalidK("ratio checks need n >= 2")
    if trials < 1:
        raise ValueError("trials must be positive")
    X = rng.standard_normal((d, n))
    pre = disagreement_sq(X)
    acc = 0.0
    for _ in range(trials):
        op = server_operator(primitive, sample_devices(n, K, rng))
        _, snap = apply_server_step(X, op)
        acc += snap.disagreement_sq if primitive is Primitive.S2S else snap.bias_sq
    return acc / trials / pre
