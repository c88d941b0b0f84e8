"""Convergence-bound evaluation for the two server primitives.

Contents:

* the two-phase linear recursion ``Xi(t) <= a1 Xi(t-1) + b1`` on server rounds
  and ``a2 Xi(t-1) + b2`` otherwise, with its closed-form average bound and a
  brute-force iterator used as an oracle;
* the per-round right-hand sides with explicit constants, for both primitives
  in the convex and non-convex settings;
* stepsize-tuned iteration counts ``T(eps)``, message costs and regime sweeps.

A second evaluator, :func:`theorem_rounds`, returns the order-of-magnitude
iteration counts with all hidden constants set to one. Regime comparisons
between the primitives are made with it by default (see ``regime_sweep``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DivergentAtK1, InvalidConfig, InvalidK, InvalidParams, StepsizeTooLarge, Unreachable
from .operators import Primitive

__all__ = [
    "Regime",
    "Axis",
    "RecursionParams",
    "BoundInputs",
    "BoundResult",
    "recursion_bound",
    "recursion_bruteforce",
    "per_round_rhs",
    "max_stepsize",
    "rounds_to_epsilon",
    "theorem_rounds",
    "communication_cost",
    "regime_sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]

_MAX_T = 2**62
_GRID_POINTS = 200
_GRID_SPAN = 1e-8
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

SWEEP_COLUMNS = ("axis_value", "T_s2s", "T_s2a", "gamma_s2s", "gamma_s2a")


class Regime(str, Enum):
    CONVEX = "convex"
    NONCONVEX = "nonconvex"

    @classmethod
    def parse(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown regime {value!r}; expected convex or nonconvex") from None


class Axis(str, Enum):
    SAMPLING_RATE = "sampling_rate"
    SERVER_PERIOD = "server_period"
    MIXING_PARAM = "mixing_param"

    @classmethod
    def parse(cls, value) -> "Axis":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "samplingrate": "sampling_rate",
            "k/n": "sampling_rate",
            "serverperiod": "server_period",
            "h": "server_period",
            "mixingparam": "mixing_param",
            "p": "mixing_param",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown sweep axis {value!r}") from None


@dataclass(frozen=True)
class RecursionParams:
    """Coefficients of the two-phase recursion.

    Attributes:
        a1: Contraction on server rounds (``t % H == 0``).
        a2: Contraction on the other rounds.
        b1: Forcing term on server rounds.
        b2: Forcing term on the other rounds.
        H: Period.
        T: Horizon; the average runs over ``t = 0..T``.
    """

    a1: float
    a2: float
    b1: float
    b2: float
    H: int
    T: int

    @property
    def C(self) -> float:
        return self.a1 * self.a2 ** (self.H - 1)

    @property
    def D(self) -> float:
        a2, H = self.a2, self.H
        # (1 - a2^(H-1)) / (1 - a2) written as a finite sum avoids 0/0 at H = 1.
        geo = sum(a2**k for k in range(H - 1))
        return self.a1 * self.b2 * geo + self.b1


def recursion_bound(params: RecursionParams) -> float:
    """Closed-form upper bound on the average ``(1/(T+1)) sum_{t<=T} Xi(t)``.

    Raises
    ------
    InvalidParams
        When a coefficient is negative, ``C >= 1`` or ``a2 == 1``.
    """
    a1, a2, b1, b2, H, T = params.a1, params.a2, params.b1, params.b2, params.H, params.T
    if min(a1, a2, b1, b2) < 0 or H < 1 or T < 0:
        raise InvalidParams("coefficients must be nonnegative, H >= 1 and T >= 0")
    C = params.C
    if not C < 1:
        raise InvalidParams(f"need a1 * a2^(H-1) < 1, got {C}")
    if a2 == 1:
        raise InvalidParams("closed form undefined at a2 == 1")
    D = params.D
    tail = 1.0 / H + 1.0 / (T + 1)
    if a2 < 1:
        core = D / ((1 - C) * (1 - a2)) + b2 * (H - 1) / (1 - a2)
    else:
        core = D / (1 - C) * (a2**H - 1) / (a2 - 1) + b2 * (a2**H - a2 * H + H - 1) / (a2 - 1) ** 2
    return core * tail


def recursion_bruteforce(params: RecursionParams) -> float:
    """Iterate the recursion with equality from ``Xi(0) = 0`` and return the average."""
    xi, total = 0.0, 0.0
    for t in range(1, params.T + 1):
        if t % params.H == 0:
            xi = params.a1 * xi + params.b1
        else:
            xi = params.a2 * xi + params.b2
        total += xi
    return total / (params.T + 1)


@dataclass(frozen=True)
class BoundInputs:
    """Problem constants entering the convergence bounds.

    Attributes:
        n: Number of devices.
        K: Devices sampled per server round.
        H: Server period.
        p: Mixing parameter in ``(0, 1]``.
        L: Smoothness constant.
        sigma_bar: Gradient noise level.
        zeta_intra: Intra-component heterogeneity.
        zeta_inter: Inter-component heterogeneity.
        epsilon: Target accuracy.
        R0_sq: Squared initial distance to the optimum (convex).
        f0: Initial optimality gap (non-convex).
        regime: Convex or non-convex.
    """

    n: int
    K: int
    H: int
    p: float
    L: float
    sigma_bar: float = 0.0
    zeta_intra: float = 0.0
    zeta_inter: float = 0.0
    epsilon: float = 1e-3
    R0_sq: float = 1.0
    f0: float = 1.0
    regime: Regime | str = Regime.NONCONVEX

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        if self.n < 1 or self.H < 1:
            raise InvalidConfig("n and H must be at least 1")
        if not 1 <= self.K <= self.n:
            raise InvalidK(f"K must satisfy 1 <= K <= n={self.n}, got {self.K}")
        if not 0 < self.p <= 1:
            raise InvalidConfig(f"p must lie in (0, 1], got {self.p}")
        if not self.L > 0:
            raise InvalidConfig("L must be positive")
        if not self.epsilon > 0:
            raise InvalidConfig("epsilon must be positive")
        for name in ("sigma_bar", "zeta_intra", "zeta_inter", "R0_sq", "f0"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be nonnegative")


@dataclass(frozen=True)
class BoundResult:
    primitive: Primitive
    T_rounds: int
    eta_star: float
    rhs_at_T: float
    server_rounds: int
    messages: tuple[int, int]


def max_stepsize(inputs: BoundInputs) -> float:
    """Largest admissible stepsize ``p / (8 L)``."""
    return inputs.p / (8.0 * inputs.L)


def _terms(inputs: BoundInputs, primitive: Primitive) -> tuple[float, float, float]:
    """Coefficients ``(init, lin, quad)`` with RHS = init/(eta (T+1)) + lin*eta + quad*eta^2."""
    n, K, H, p, L = inputs.n, inputs.K, inputs.H, inputs.p, inputs.L
    s2, zi2, ze2 = inputs.sigma_bar**2, inputs.zeta_intra**2, inputs.zeta_inter**2
    convex = inputs.regime is Regime.CONVEX
    init = inputs.R0_sq if convex else 4.0 * inputs.f0
    noise = s2 / n if convex else 2.0 * L * s2 / n
    if primitive is Primitive.S2S:
        if K == 1:
            raise DivergentAtK1("S2S bounds carry (n-1)/(K-1) and diverge at K = 1")
        r = (n - 1) / (K - 1) if n > 1 else 1.0
        if convex:
            quad = r * 72 * L * zi2 / p**2 + r**2 * 210 * L * H * (H - 1) * ze2
        else:
            quad = r * 192 * L**2 * zi2 / p**2 + r**2 * 560 * L**2 * H * (H - 1) * ze2
        return init, noise, quad
    dev = (n - K) / (K * (n - 1)) if n > 1 else 0.0
    if convex:
        lin = noise + dev * 54 * zi2 / (H * p**2) + dev * 26 * H * ze2
        quad = 96 * L * zi2 / p**2 + 16 * L * H**2 * ze2
    else:
        lin = noise + dev * 108 * L * zi2 / (H * p**2) + dev * 52 * L * H * ze2
        quad = 192 * L**2 * zi2 / p**2 + 32 * L**2 * H**2 * ze2
    return init, lin, quad


def per_round_rhs(inputs: BoundInputs, primitive, eta: float, T: int) -> float:
    """Average-error bound after ``T + 1`` rounds at constant stepsize ``eta``.

    Convex runs bound the average optimality gap, non-convex runs the average
    squared gradient norm of the averaged model.

    Raises
    ------
    StepsizeTooLarge
        When ``eta`` exceeds ``p / (8 L)`` or is not positive.
    DivergentAtK1
        For S2S with ``K = 1``.
    """
    primitive = Primitive.parse(primitive)
    cap = max_stepsize(inputs)
    if not 0 < eta <= cap * (1 + 1e-12):
        raise StepsizeTooLarge(f"stepsize {eta} outside (0, p/(8L)] = (0, {cap}]")
    if T < 0:
        raise InvalidConfig("T must be nonnegative")
    init, lin, quad = _terms(inputs, primitive)
    return init / (eta * (T + 1)) + lin * eta + quad * eta**2


def _best_eta(coeffs, T: int, cap: float) -> tuple[float, float]:
    init, lin, quad = coeffs

    def f(eta):
        return init / (eta * (T + 1)) + lin * eta + quad * eta**2

    grid = np.geomspace(_GRID_SPAN * cap, cap, _GRID_POINTS)
    vals = init / (grid * (T + 1)) + lin * grid + quad * grid**2
    k = int(np.argmin(vals))
    # One golden-section pass in log-space between the grid neighbours.
    lo = math.log(grid[max(k - 1, 0)])
    hi = math.log(grid[min(k + 1, _GRID_POINTS - 1)])
    a = hi - _GOLDEN * (hi - lo)
    b = lo + _GOLDEN * (hi - lo)
    fa, fb = f(math.exp(a)), f(math.exp(b))
    for _ in range(60):
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - _GOLDEN * (hi - lo)
            fa = f(math.exp(a))
        else:
            lo, a, fa = a, b, fb
            b = lo + _GOLDEN * (hi - lo)
            fb = f(math.exp(b))
    best_eta, best = float(grid[k]), float(vals[k])
    for e in (math.exp(a), math.exp(b)):
        e = min(e, cap)
        v = f(e)
        if v < best:
            best_eta, best = e, v
    return best_eta, best


def _messages(primitive: Primitive, n: int, K: int, R: int) -> tuple[int, int]:
    return (K * R, K * R) if primitive is Primitive.S2S else (K * R, n * R)


def rounds_to_epsilon(inputs: BoundInputs, primitive) -> BoundResult:
    """Smallest ``T`` whose stepsize-optimized bound reaches ``epsilon``.

    The stepsize is searched on a 200-point logarithmic grid over
    ``[1e-8 * p/(8L), p/(8L)]`` and refined by golden section. ``T`` is found
    by doubling then bisection and is never below ``H - 1``.

    Raises
    ------
    Unreachable
        When even ``T = 2^62`` does not reach ``epsilon``.
    DivergentAtK1
        For S2S with ``K = 1``.
    """
    primitive = Primitive.parse(primitive)
    coeffs = _terms(inputs, primitive)
    cap = max_stepsize(inputs)
    eps = inputs.epsilon

    def ok(T):
        return _best_eta(coeffs, T, cap)[1] <= eps

    floor = max(inputs.H - 1, 0)
    if ok(floor):
        T = floor
    else:
        lo, hi = floor, max(2 * floor, 1)
        while not ok(hi):
            lo = hi
            hi *= 2
            if hi > _MAX_T:
                raise Unreachable(f"{primitive.name} bound stays above epsilon={eps} up to T=2^62")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
        T = hi
    eta, rhs = _best_eta(coeffs, T, cap)
    R = math.ceil(T / inputs.H) if T > 0 else 1
    return BoundResult(
        primitive=primitive,
        T_rounds=int(T),
        eta_star=eta,
        rhs_at_T=rhs,
        server_rounds=R,
        messages=_messages(primitive, inputs.n, inputs.K, R),
    )


def theorem_rounds(inputs: BoundInputs, primitive) -> float:
    """Order-of-magnitude iteration count with every hidden constant set to one.

    For S2S the sum is ``sigma^2/(n eps^2) + sqrt(r) zeta_intra/(p eps^1.5)
    + r H zeta_inter/eps^1.5 + 1/(p eps)`` with ``r = (n-1)/(K-1)``; S2A
    replaces the sampled terms by ``delta zeta_intra^2/(H p^2 eps^2) + delta H
    zeta_inter^2/eps^2`` plus the unsampled ``eps^-1.5`` terms, with
    ``delta = (n-K)/(K(n-1))``. The result is scaled by ``L f0`` (non-convex)
    or ``R0^2`` with ``sqrt(L)`` on the heterogeneity terms (convex).
    """
    primitive = Primitive.parse(primitive)
    n, K, H, p, L, eps = inputs.n, inputs.K, inputs.H, inputs.p, inputs.L, inputs.epsilon
    s2, zi, ze = inputs.sigma_bar**2, inputs.zeta_intra, inputs.zeta_inter
    convex = inputs.regime is Regime.CONVEX
    root_l = math.sqrt(L) if convex else 1.0
    last = L / (p * eps) if convex else 1.0 / (p * eps)
    base = s2 / (n * eps**2) + last
    if primitive is Primitive.S2S:
        if K == 1:
            raise DivergentAtK1("S2S bounds carry (n-1)/(K-1) and diverge at K = 1")
        r = (n - 1) / (K - 1) if n > 1 else 1.0
        total = base + math.sqrt(r) * root_l * zi / (p * eps**1.5) + r * root_l * H * ze / eps**1.5
    else:
        dev = (n - K) / (K * (n - 1)) if n > 1 else 0.0
        total = (
            base
            + dev * zi**2 / (H * p**2 * eps**2)
            + dev * H * ze**2 / eps**2
            + root_l * zi / (p * eps**1.5)
            + root_l * H * ze / eps**1.5
        )
    return total * (inputs.R0_sq if convex else L * inputs.f0)


def communication_cost(
    result: BoundResult,
    primitive,
    n: int,
    K: int,
    H: int,
    other: BoundResult | None = None,
) -> tuple[float, float | None]:
    """Total messages ``Gamma`` and its ratio to a companion result.

    ``Gamma = (2K/H) T`` for S2S and ``((K + n)/H) T`` for S2A. The ratio is
    ``Gamma / Gamma_other`` where the companion uses the other primitive.
    """
    primitive = Primitive.parse(primitive)

    def gamma(prim, T):
        per = 2 * K if prim is Primitive.S2S else K + n
        return per / H * T

    g = gamma(primitive, result.T_rounds)
    if other is None:
        return g, None
    other_prim = Primitive.S2A if primitive is Primitive.S2S else Primitive.S2S
    g_other = gamma(other_prim, other.T_rounds)
    return g, (g / g_other if g_other > 0 else math.inf)


def _at(base: BoundInputs, axis: Axis, value: float) -> BoundInputs:
    if axis is Axis.SAMPLING_RATE:
        if not 0 < value <= 1:
            raise InvalidConfig(f"sampling rate must lie in (0, 1], got {value}")
        return replace(base, K=max(1, int(round(value * base.n))))
    if axis is Axis.SERVER_PERIOD:
        if value < 1 or value != int(value):
            raise InvalidConfig(f"server period must be a positive integer, got {value}")
        return replace(base, H=int(value))
    if not 0 < value <= 1:
        raise InvalidConfig(f"mixing parameter must lie in (0, 1], got {value}")
    return replace(base, p=float(value))


def regime_sweep(
    base: BoundInputs,
    axis,
    grid,
    method: str = "theorem",
) -> list[dict[str, float]]:
    """Iteration and message counts of both primitives along one axis.

    Parameters
    ----------
    base : BoundInputs
        Fixed constants; the swept field is overwritten per grid point.
    axis : Axis or str
        ``sampling_rate`` (K/n), ``server_period`` (H) or ``mixing_param`` (p).
    grid : iterable of float
        Axis values.
    method : {"theorem", "explicit"}
        ``theorem`` evaluates :func:`theorem_rounds`; ``explicit`` tunes the
        stepsize on the bounds with explicit constants via
        :func:`rounds_to_epsilon`.

    Returns
    -------
    list of dict
        Rows keyed by ``SWEEP_COLUMNS``.
    """
    axis = Axis.parse(axis)
    if method not in ("theorem", "explicit"):
        raise ValueError(f"unknown method {method!r}")
    rows = []
    for value in grid:
        inp = _at(base, axis, float(value))
        T = {}
        for prim in Primitive:
            if method == "theorem":
                T[prim] = theorem_rounds(inp, prim)
            else:
                T[prim] = rounds_to_epsilon(inp, prim).T_rounds
        rows.append(
            {
                "axis_value": float(value),
                "T_s2s": T[Primitive.S2S],
                "T_s2a": T[Primitive.S2A],
                "gamma_s2s": 2 * inp.K / inp.H * T[Primitive.S2S],
                "gamma_s2a": (inp.K + inp.n) / inp.H * T[Primitive.S2A],
            }
        )
    return rows


def write_sweep_csv(rows: list[dict[str, float]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in SWEEP_COLUMNS])
    return path
