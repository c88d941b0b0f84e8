"""Round-by-round simulator for semi-decentralized learning.

Each round performs one local stochastic-gradient step per device, one D2D
mixing step, and, when ``t % H == 0``, a server round with ``K`` sampled
devices under the chosen primitive.

Randomness is split into independent streams keyed by the run seed: one per
``(round, device)`` for gradient noise, one per server round for sampling and
one per round for topology resampling. Switching the primitive therefore does
not change any gradient noise draw.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, InvalidK, NonFiniteState
from .operators import Primitive, apply_server_step, disagreement_decomposed, sample_devices, server_operator
from .topology import (
    Topology,
    TopologyKind,
    build_topology,
    component_projector,
    metropolis_weights,
    resample_topology,
)

__all__ = [
    "SimConfig",
    "TraceRecord",
    "RunTrace",
    "run",
    "server_round_schedule",
    "message_cost",
    "error_ratios",
    "trace_filename",
    "write_trace_csv",
    "read_trace_csv",
    "TRACE_COLUMNS",
]

_GRAD_STREAM = 0x6A
_SERVER_STREAM = 0x5E

TRACE_COLUMNS = (
    "round",
    "is_server",
    "f_gap",
    "grad_norm_sq",
    "bias_sq",
    "disagreement_sq",
    "intra_sq",
    "inter_sq",
    "uplinks",
    "downlinks",
)


@dataclass(frozen=True)
class SimConfig:
    """Inputs of one simulation run.

    Attributes:
        component_sizes: Devices per component; they sum to ``n``.
        topology: Graph kind used inside every component.
        primitive: ``S2S`` or ``S2A``.
        K: Devices sampled per server round.
        H: Server period; rounds with ``t % H == 0`` are server rounds.
        T: Number of rounds.
        eta: Constant stepsize.
        seed: Master seed for all random streams.
        time_varying: Redraw the graph every round (random regular only).
        trace_every: Record spacing for non-server rounds.
        degree: Degree of random regular graphs.
        x0: Shared initial model; zeros when omitted.
    """

    component_sizes: tuple[int, ...]
    topology: TopologyKind | str = TopologyKind.RING
    primitive: Primitive | str = Primitive.S2S
    K: int = 1
    H: int = 1
    T: int = 1
    eta: float = 0.1
    seed: int = 0
    time_varying: bool = False
    trace_every: int = 1
    degree: int | None = None
    x0: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "component_sizes", tuple(int(s) for s in self.component_sizes))
        object.__setattr__(self, "topology", TopologyKind.parse(self.topology))
        object.__setattr__(self, "primitive", Primitive.parse(self.primitive))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if not self.component_sizes or min(self.component_sizes) < 1:
            raise InvalidConfig("component_sizes must be positive integers")
        if not 1 <= self.K <= self.n:
            raise InvalidK(f"K must satisfy 1 <= K <= n={self.n}, got {self.K}")
        if self.H < 1:
            raise InvalidConfig("H must be at least 1")
        if self.T < 1:
            raise InvalidConfig("T must be at least 1")
        if not (self.eta >= 0 and math.isfinite(self.eta)):
            raise InvalidConfig("eta must be a finite nonnegative number")
        if self.trace_every < 1:
            raise InvalidConfig("trace_every must be at least 1")

    @property
    def n(self) -> int:
        return sum(self.component_sizes)


@dataclass(frozen=True)
class TraceRecord:
    """State after round ``round`` (server step included when ``is_server``)."""

    round: int
    is_server: bool
    f_gap: float
    grad_norm_sq: float
    bias_sq: float
    disagreement_sq: float
    intra_sq: float
    inter_sq: float
    pre_disagreement_sq: float
    uplinks: int
    downlinks: int


@dataclass
class RunTrace:
    config: SimConfig
    records: list[TraceRecord] = field(default_factory=list)
    final: np.ndarray | None = None
    uplinks: int = 0
    downlinks: int = 0
    server_rounds: int = 0
    xbar: list[np.ndarray] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def server_records(self) -> list[TraceRecord]:
        return [r for r in self.records if r.is_server]


def server_round_schedule(T: int, H: int) -> list[int]:
    """Rounds ``0, H, 2H, ...`` below ``T``."""
    if T < 1 or H < 1:
        raise InvalidConfig("T and H must be at least 1")
    return list(range(0, T, H))


def _gradient_noise(obj, seed: int, t: int) -> np.ndarray:
    cols = [
        obj.noise(np.random.default_rng([int(seed), _GRAD_STREAM, t, i])) for i in range(obj.n)
    ]
    return np.stack(cols, axis=1)


def run(cfg: SimConfig, obj, topology: Topology | None = None) -> RunTrace:
    """Simulate ``cfg.T`` rounds on objective ``obj``.

    Parameters
    ----------
    cfg : SimConfig
        Run parameters.
    obj : QuadraticObjective or LogisticObjective
        Local objectives; ``obj.n`` must equal ``cfg.n``.
    topology : Topology, optional
        Prebuilt graph; built from ``cfg`` when omitted.

    Returns
    -------
    RunTrace
        Records for rounds with ``t % trace_every == 0``, every server round and
        the last round, the final parameter matrix and message counters.

    Raises
    ------
    DimensionMismatch
        When the objective and the configuration disagree on sizes.
    NonFiniteState
        When a NaN or inf appears in the parameters.
    """
    if topology is None:
        topology = build_topology(cfg.topology, cfg.component_sizes, seed=cfg.seed, degree=cfg.degree)
    if topology.component_sizes != cfg.component_sizes:
        raise DimensionMismatch("topology does not match component_sizes")
    if obj.n != cfg.n:
        raise DimensionMismatch(f"objective has {obj.n} devices, config has {cfg.n}")
    d = obj.dim
    if cfg.x0 is None:
        x0 = np.zeros(d)
    else:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.shape != (d,):
            raise DimensionMismatch(f"x0 has length {x0.size}, objective dimension is {d}")

    n, K, H = cfg.n, cfg.K, cfg.H
    W = metropolis_weights(topology)
    proj = component_projector(topology)
    X = np.repeat(x0[:, None], n, axis=1)
    trace = RunTrace(config=cfg)
    noisy = obj.noise_std > 0
    per_down = K if cfg.primitive is Primitive.S2S else n

    # Overflow is reported as NonFiniteState below rather than as a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(cfg.T):
            G = obj.grads(X)
            if noisy:
                G = G + _gradient_noise(obj, cfg.seed, t)
            X = X - cfg.eta * G
            if cfg.time_varying:
                W = metropolis_weights(resample_topology(topology, t, cfg.seed))
            X = W.mix(X)

            is_server = t % H == 0
            pre = None
            if is_server:
                rng = np.random.default_rng([int(cfg.seed), _SERVER_STREAM, t])
                op = server_operator(cfg.primitive, sample_devices(n, K, rng))
                pre = disagreement_decomposed(X)[0]
                X, snap = apply_server_step(X, op, proj, round_=t)
                trace.uplinks += K
                trace.downlinks += per_down
                trace.server_rounds += 1

            if not np.all(np.isfinite(X)):
                raise NonFiniteState(t)

            if is_server or t % cfg.trace_every == 0 or t == cfg.T - 1:
                if is_server:
                    bias, total, intra, inter = snap.bias_sq, snap.disagreement_sq, snap.intra_sq, snap.inter_sq
                else:
                    total, intra, inter = disagreement_decomposed(X, proj)
                    bias = 0.0
                    pre = total
                xbar = X.mean(axis=1)
                g = obj.full_grad(xbar)
                trace.records.append(
                    TraceRecord(
                        round=t,
                        is_server=is_server,
                        f_gap=float(obj.optimality_gap(xbar)),
                        grad_norm_sq=float(g @ g),
                        bias_sq=bias,
                        disagreement_sq=total,
                        intra_sq=intra,
                        inter_sq=inter,
                        pre_disagreement_sq=float(pre),
                        uplinks=trace.uplinks,
                        downlinks=trace.downlinks,
                    )
                )
                trace.xbar.append(xbar)

    trace.final = X
    return trace


def message_cost(trace: RunTrace) -> tuple[int, int]:
    """Total ``(uplinks, downlinks)`` of a completed run."""
    return trace.uplinks, trace.downlinks


def error_ratios(trace: RunTrace) -> dict[str, np.ndarray]:
    """Per-server-round bias and disagreement relative to the pre-step disagreement."""
    recs = [r for r in trace.server_records() if r.pre_disagreement_sq > 0]
    pre = np.array([r.pre_disagreement_sq for r in recs])
    return {
        "round": np.array([r.round for r in recs]),
        "bias_ratio": np.array([r.bias_sq for r in recs]) / pre if recs else np.array([]),
        "disagreement_ratio": np.array([r.disagreement_sq for r in recs]) / pre if recs else np.array([]),
    }


def trace_filename(cfg: SimConfig) -> str:
    return f"{cfg.primitive.name}_K{cfg.K}_H{cfg.H}_{cfg.topology.value}_seed{cfg.seed}.csv"


def write_trace_csv(trace: RunTrace, directory: str | Path) -> Path:
    """Write the trace into ``directory`` and return the file path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / trace_filename(trace.config)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace.records:
            w.writerow(
                [
                    r.round,
                    int(r.is_server),
                    repr(r.f_gap),
                    repr(r.grad_norm_sq),
                    repr(r.bias_sq),
                    repr(r.disagreement_sq),
                    repr(r.intra_sq),
                    repr(r.inter_sq),
                    r.uplinks,
                    r.downlinks,
                ]
            )
    return path


def read_trace_csv(path: str | Path) -> list[dict[str, float]]:
    """Rows of a trace CSV with numeric values."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    k: (int(v) if k in ("round", "is_server", "uplinks", "downlinks") else float(v))
                    for k, v in row.items()
                }
            )
    return out
