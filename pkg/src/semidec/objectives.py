"""Desk-scale local objectives with controllable heterogeneity.

Two families are provided:

* :class:`QuadraticObjective` with ``f_i(x) = 1/2 (x - mu_i)^T Q (x - mu_i)``.
  Component offsets set the inter-component spread, per-device offsets the
  intra-component spread. The optimum is available in closed form.
* :class:`LogisticObjective`, a multinomial logistic regression on synthetic
  Gaussian class clusters. Class splits across components and Dirichlet label
  skew within components mimic the usual non-IID partitions.

Stochastic gradients are exact gradients plus isotropic Gaussian noise with
``E||noise||^2 = noise_std^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, NotConverged
from .topology import ComponentProjector, MixingMatrix, Topology

__all__ = [
    "HeterogeneityConfig",
    "HeterogeneityEstimate",
    "QuadraticObjective",
    "LogisticObjective",
    "make_quadratic",
    "make_logistic",
    "stochastic_gradient",
    "optimality_gap",
    "default_probes",
    "measure_heterogeneity",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(frozen=True)
class HeterogeneityConfig:
    """Knobs for intra- and inter-component heterogeneity.

    Attributes:
        intra_scale: Quadratic only. Norm of the per-device target offsets
            inside a component. Zero means IID within components.
        inter_scale: Quadratic only. Norm of the per-component target offsets.
            Zero means IID across components.
        dirichlet_alpha: Logistic only. Concentration of the per-device class
            proportions. ``None`` or ``inf`` means uniform proportions.
        disjoint_classes: Logistic only. Give each component its own block of
            classes.
    """

    intra_scale: float = 0.0
    inter_scale: float = 0.0
    dirichlet_alpha: float | None = None
    disjoint_classes: bool = False

    def __post_init__(self):
        if self.intra_scale < 0 or self.inter_scale < 0:
            raise InvalidConfig("heterogeneity scales must be nonnegative")
        if self.dirichlet_alpha is not None and not self.dirichlet_alpha > 0:
            raise InvalidConfig("dirichlet_alpha must be positive")


@dataclass(frozen=True)
class HeterogeneityEstimate:
    zeta_intra: float
    zeta_inter: float
    probe_count: int


class _Objective:
    """Shared plumbing. Subclasses define ``grad``, ``local_value`` and ``grads``."""

    topology: Topology
    noise_std: float
    dim: int

    @property
    def n(self) -> int:
        return self.topology.n

    def value(self, x: np.ndarray) -> float:
        """Global objective ``(1/n) sum_i f_i(x)``."""
        return float(np.mean([self.local_value(i, x) for i in range(self.n)]))

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the global objective."""
        X = np.repeat(np.asarray(x, dtype=float)[:, None], self.n, axis=1)
        return self.grads(X).mean(axis=1)

    def noise(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(0.0, self.noise_std / math.sqrt(self.dim), self.dim)

    def _check_x(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"expected a vector of length {self.dim}, got {x.shape}")
        return x


class QuadraticObjective(_Objective):
    """``f_i(x) = 1/2 (x - mu_i)^T Q (x - mu_i)`` with shared curvature ``Q``."""

    kind = "quadratic"

    def __init__(self, targets: np.ndarray, curvature: np.ndarray, topology: Topology, noise_std: float = 0.0):
        targets = np.asarray(targets, dtype=float)
        curvature = np.asarray(curvature, dtype=float)
        if targets.shape[1] != topology.n:
            raise DimensionMismatch("need one target column per device")
        if curvature.shape != (targets.shape[0],) * 2:
            raise DimensionMismatch("curvature must be d x d")
        eig = np.linalg.eigvalsh(curvature)
        if eig[0] <= 0:
            raise InvalidConfig("curvature must be positive definite")
        if noise_std < 0:
            raise InvalidConfig("noise_std must be nonnegative")
        self.targets = targets
        self.curvature = curvature
        self.topology = topology
        self.noise_std = float(noise_std)
        self.dim = targets.shape[0]
        self.L = float(eig[-1])
        self.x_star = targets.mean(axis=1)
        # f(x) = f* + 1/2 (x - x*)^T Q (x - x*), f* = mean_i 1/2 (x* - mu_i)^T Q (x* - mu_i)
        diffs = self.x_star[:, None] - targets
        self.f_star = float(0.5 * np.mean(np.sum(diffs * (curvature @ diffs), axis=0)))

    def local_value(self, i: int, x: np.ndarray) -> float:
        r = self._check_x(x) - self.targets[:, i]
        return float(0.5 * r @ self.curvature @ r)

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.curvature @ (self._check_x(x) - self.targets[:, i])

    def grads(self, X: np.ndarray) -> np.ndarray:
        """Exact local gradients, column ``i`` evaluated at ``X[:, i]``."""
        return self.curvature @ (X - self.targets)

    def value(self, x: np.ndarray) -> float:
        r = self._check_x(x) - self.x_star
        return self.f_star + float(0.5 * r @ self.curvature @ r)

    def optimality_gap(self, x: np.ndarray) -> float:
        r = self._check_x(x) - self.x_star
        return float(0.5 * r @ self.curvature @ r)


def _component_directions(C: int, d: int) -> np.ndarray:
    # +e0, -e0, +e1, -e1, ... so two equal components are centred.
    out = np.zeros((C, d))
    for c in range(C):
        out[c, (c // 2) % d] = 1.0 if c % 2 == 0 else -1.0
    return out


def make_quadratic(
    d: int,
    t: Topology,
    h: HeterogeneityConfig = HeterogeneityConfig(),
    L: float = 1.0,
    seed: int = 0,
    noise_std: float = 0.0,
) -> QuadraticObjective:
    """Quadratic objectives ``Q = L I`` with structured targets.

    Parameters
    ----------
    d : int
        Parameter dimension.
    t : Topology
        Supplies the component partition.
    h : HeterogeneityConfig
        ``inter_scale`` sets the norm of the component offsets (alternating
        signs along the coordinate axes); ``intra_scale`` sets the norm of the
        per-device offsets, which are centred within each component.
    L : float
        Curvature, equal to the smoothness constant.
    seed : int
        Seeds the shared base target and the device offsets.
    noise_std : float
        Gradient noise level.
    """
    if d < 1:
        raise InvalidConfig("d must be positive")
    if not L > 0:
        raise InvalidConfig("L must be positive")
    rng = np.random.default_rng([int(seed), 0x51])
    base = rng.standard_normal(d)
    dirs = _component_directions(t.num_components, d)
    targets = np.empty((d, t.n))
    for c, comp in enumerate(t.components):
        idx = list(comp)
        u = rng.standard_normal((d, len(idx)))
        u /= np.linalg.norm(u, axis=0, keepdims=True)
        delta = h.intra_scale * u
        if len(idx) > 1:
            delta -= delta.mean(axis=1, keepdims=True)
        else:
            delta[:] = 0.0
        targets[:, idx] = (base + h.inter_scale * dirs[c])[:, None] + delta
    return QuadraticObjective(targets, L * np.eye(d), t, noise_std)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


class LogisticObjective(_Objective):
    """Multinomial logistic regression, one labelled sample set per device.

    The parameter vector is the flattened ``(classes, features)`` weight
    matrix. A small ridge term keeps the optimum finite on separable data.
    """

    kind = "logistic"

    def __init__(
        self,
        features: list[np.ndarray],
        labels: list[np.ndarray],
        classes: int,
        topology: Topology,
        noise_std: float = 0.0,
        l2: float = 1e-2,
    ):
        if len(features) != topology.n or len(labels) != topology.n:
            raise DimensionMismatch("need one sample set per device")
        if classes < 2:
            raise InvalidConfig("classes must be at least 2")
        if noise_std < 0 or l2 < 0:
            raise InvalidConfig("noise_std and l2 must be nonnegative")
        self.features = [np.asarray(a, dtype=float) for a in features]
        self.labels = [np.asarray(y, dtype=int) for y in labels]
        for a, y in zip(self.features, self.labels):
            if a.ndim != 2 or len(a) < 1 or len(a) != len(y):
                raise InvalidConfig("every device needs at least one labelled sample")
            if not np.all(np.isfinite(a)):
                raise InvalidConfig("features must be finite")
            if y.min() < 0 or y.max() >= classes:
                raise InvalidConfig("label out of range")
        self.classes = int(classes)
        self.features_dim = self.features[0].shape[1]
        self.topology = topology
        self.noise_std = float(noise_std)
        self.l2 = float(l2)
        self.dim = self.classes * self.features_dim
        self.L = max(
            0.5 * float(np.linalg.eigvalsh(a.T @ a / len(a))[-1]) for a in self.features
        ) + self.l2
        self._reference: tuple[np.ndarray, float] | None = None

    def _unflatten(self, x: np.ndarray) -> np.ndarray:
        return self._check_x(x).reshape(self.classes, self.features_dim)

    def local_value(self, i: int, x: np.ndarray) -> float:
        Wt = self._unflatten(x)
        a, y = self.features[i], self.labels[i]
        z = a @ Wt.T
        nll = _logsumexp(z) - z[np.arange(len(y)), y]
        return float(nll.mean() + 0.5 * self.l2 * np.sum(Wt * Wt))

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        Wt = self._unflatten(x)
        a, y = self.features[i], self.labels[i]
        P = _softmax(a @ Wt.T)
        P[np.arange(len(y)), y] -= 1.0
        return (P.T @ a / len(y) + self.l2 * Wt).ravel()

    def grads(self, X: np.ndarray) -> np.ndarray:
        if X.shape != (self.dim, self.n):
            raise DimensionMismatch(f"expected shape {(self.dim, self.n)}, got {X.shape}")
        return np.stack([self.grad(i, X[:, i]) for i in range(self.n)], axis=1)

    def reference(self, tol: float = 1e-8, max_iter: int = 1_000_000) -> tuple[np.ndarray, float]:
        """Minimizer and minimum of the global objective by full-batch gradient descent.

        Computed once and cached. Raises :class:`NotConverged` when the gradient
        norm does not reach ``tol`` within ``max_iter`` steps.
        """
        if self._reference is None:
            A = np.concatenate(self.features)
            Y = np.concatenate(self.labels)
            w = np.concatenate([np.full(len(y), 1.0 / (self.n * len(y))) for y in self.labels])
            lip = 0.5 * float(np.linalg.eigvalsh(A.T @ (A * w[:, None]))[-1]) + self.l2
            step = 1.0 / lip
            Wt = np.zeros((self.classes, self.features_dim))
            rows = np.arange(len(Y))
            for _ in range(max_iter):
                P = _softmax(A @ Wt.T)
                P[rows, Y] -= 1.0
                g = (P * w[:, None]).T @ A + self.l2 * Wt
                if np.linalg.norm(g) <= tol:
                    break
                Wt = Wt - step * g
            else:
                raise NotConverged(f"reference solve did not reach gradient norm {tol}")
            x = Wt.ravel()
            self._reference = (x, self.value(x))
        return self._reference

    @property
    def x_star(self) -> np.ndarray:
        return self.reference()[0]

    @property
    def f_star(self) -> float:
        return self.reference()[1]

    def optimality_gap(self, x: np.ndarray) -> float:
        return self.value(x) - self.f_star


def make_logistic(
    d: int,
    classes: int,
    samples_per_device: int,
    t: Topology,
    h: HeterogeneityConfig = HeterogeneityConfig(),
    seed: int = 0,
    noise_std: float = 0.0,
    l2: float = 1e-2,
    cluster_scale: float = 3.0,
) -> LogisticObjective:
    """Synthetic Gaussian class clusters split across devices.

    Class means are standard normal vectors scaled by ``cluster_scale``; each
    sample is its class mean plus standard normal noise. With
    ``h.disjoint_classes`` the classes are cut into one contiguous block per
    component. Within the allowed classes, device proportions are uniform or
    Dirichlet(``h.dirichlet_alpha``).
    """
    if classes < 2:
        raise InvalidConfig("classes must be at least 2")
    if samples_per_device < 1:
        raise InvalidConfig("samples_per_device must be at least 1")
    C = t.num_components
    if h.disjoint_classes and classes < 2 * C:
        raise InvalidConfig(f"disjoint class split needs classes >= 2*C = {2 * C}, got {classes}")
    rng = np.random.default_rng([int(seed), 0x10])
    means = cluster_scale * rng.standard_normal((classes, d))
    if h.disjoint_classes:
        blocks = np.array_split(np.arange(classes), C)
    else:
        blocks = [np.arange(classes)] * C
    alpha = h.dirichlet_alpha
    features, labels = [], []
    labels_of = t.component_of()
    for i in range(t.n):
        allowed = blocks[labels_of[i]]
        if alpha is None or math.isinf(alpha):
            props = np.full(len(allowed), 1.0 / len(allowed))
        else:
            props = rng.dirichlet(np.full(len(allowed), alpha))
        y = rng.choice(allowed, size=samples_per_device, p=props)
        a = means[y] + rng.standard_normal((samples_per_device, d))
        features.append(a)
        labels.append(y)
    return LogisticObjective(features, labels, classes, t, noise_std, l2)


Objective = QuadraticObjective | LogisticObjective


def stochastic_gradient(obj: Objective, i: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unbiased gradient estimate of ``f_i`` at ``x``."""
    g = obj.grad(i, x)
    if obj.noise_std > 0:
        g = g + obj.noise(rng)
    return g


def optimality_gap(obj: Objective, x: np.ndarray) -> float:
    """``f(x) - f*`` of the global objective."""
    return obj.optimality_gap(x)


def default_probes(obj: Objective, count: int = 16, radius: float = 5.0, seed: int = 0) -> list[np.ndarray]:
    """Points drawn uniformly from the ball of ``radius`` around the optimum."""
    rng = np.random.default_rng([int(seed), 0x9B])
    center = obj.x_star
    out = []
    for _ in range(count):
        u = rng.standard_normal(obj.dim)
        u /= np.linalg.norm(u)
        out.append(center + radius * rng.uniform() ** (1.0 / obj.dim) * u)
    return out


def measure_heterogeneity(
    obj: Objective,
    W: MixingMatrix,
    proj: ComponentProjector,
    probes: list[np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    draws: int = 100,
) -> HeterogeneityEstimate:
    """Estimate the intra- and inter-component heterogeneity constants.

    For every probe ``x`` all devices evaluate stochastic gradients at ``x``;
    the mean over ``draws`` of ``(1/n)||G (W - Pi_C)||_F^2`` and
    ``(1/n)||G (Pi_C - Pi)||_F^2`` is taken, then the maximum over probes.
    Probe ``k`` uses its own child stream, so extending the probe list never
    lowers an estimate. The result is a lower bound on the true suprema.
    """
    if probes is None:
        probes = default_probes(obj)
    if len(probes) == 0:
        raise InvalidConfig("need at least one probe")
    rng = np.random.default_rng(0) if rng is None else rng
    children = rng.spawn(len(probes))
    M_intra = W.entries - proj.entries
    M_inter = proj.entries - proj.global_projector
    n = obj.n
    reps = draws if obj.noise_std > 0 else 1
    best_intra = best_inter = 0.0
    for x, child in zip(probes, children):
        X = np.repeat(np.asarray(x, dtype=float)[:, None], n, axis=1)
        G0 = obj.grads(X)
        s_intra = s_inter = 0.0
        for _ in range(reps):
            G = G0
            if obj.noise_std > 0:
                G = G0 + child.normal(0.0, obj.noise_std / math.sqrt(obj.dim), G0.shape)
            s_intra += float(np.sum((G @ M_intra) ** 2)) / n
            s_inter += float(np.sum((G @ M_inter) ** 2)) / n
        best_intra = max(best_intra, s_intra / reps)
        best_inter = max(best_inter, s_inter / reps)
    return HeterogeneityEstimate(
        zeta_intra=math.sqrt(best_intra), zeta_inter=math.sqrt(best_inter), probe_count=len(probes)
    )


def write_dataset_csv(obj: LogisticObjective, path: str | Path) -> None:
    """Columns ``device, component, label, feature_0 ... feature_{d-1}``."""
    comp = obj.topology.component_of()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device", "component", "label"] + [f"feature_{k}" for k in range(obj.features_dim)])
        for i, (a, y) in enumerate(zip(obj.features, obj.labels)):
            for row, lab in zip(a, y):
                w.writerow([i, int(comp[i]), int(lab)] + [repr(float(v)) for v in row])


def read_dataset_csv(
    path: str | Path,
    t: Topology,
    classes: int,
    noise_std: float = 0.0,
    l2: float = 1e-2,
) -> LogisticObjective:
    """Inverse of :func:`write_dataset_csv`."""
    feats: dict[int, list[list[float]]] = {}
    labs: dict[int, list[int]] = {}
    comp_of = t.component_of()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["device"])
            if int(row["component"]) != comp_of[i]:
                raise InvalidConfig(f"device {i} listed in the wrong component")
            keys = sorted((k for k in row if k.startswith("feature_")), key=lambda k: int(k[8:]))
            feats.setdefault(i, []).append([float(row[k]) for k in keys])
            labs.setdefault(i, []).append(int(row["label"]))
    missing = set(range(t.n)) - set(feats)
    if missing:
        raise InvalidConfig(f"devices without samples: {sorted(missing)[:5]}")
    return LogisticObjective(
        [np.array(feats[i]) for i in range(t.n)],
        [np.array(labs[i]) for i in range(t.n)],
        classes,
        t,
        noise_std,
        l2,
    )
