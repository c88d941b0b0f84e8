"""Command-line front end: ``semidec {simulate,sweep,bounds,measure-het}``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
4 bound evaluated outside its domain (S2S with ``K = 1``).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bounds import (
    Axis,
    BoundInputs,
    Regime,
    communication_cost,
    regime_sweep,
    rounds_to_epsilon,
    theorem_rounds,
    write_sweep_csv,
)
from .config import ExperimentConfig, bounds_to_ini, load_bounds, load_config
from .engine import run, write_trace_csv
from .errors import DivergentAtK1, InvalidConfig, NonFiniteState, SemidecError
from .objectives import make_logistic, make_quadratic, measure_heterogeneity
from .operators import Primitive
from .topology import build_topology, component_projector, metropolis_weights, spectral_mixing_parameter

__all__ = ["main", "SummaryRow", "build_objective", "EXIT_OK", "EXIT_CONFIG", "EXIT_DIVERGED", "EXIT_DOMAIN"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_DOMAIN = 4


@dataclass(frozen=True)
class SummaryRow:
    """Across-seed summary of one configuration and primitive."""

    fingerprint: str
    primitive: str
    seeds: int
    mean_gap: float
    stderr_gap: float | None
    mean_grad_norm_sq: float
    uplinks: int
    downlinks: int

    def format(self) -> str:
        err = "n/a" if self.stderr_gap is None else f"{self.stderr_gap:.3e}"
        return (
            f"{self.fingerprint}  {self.primitive:<4} seeds={self.seeds}  "
            f"final_gap={self.mean_gap:.6e} +/- {err}  grad_sq={self.mean_grad_norm_sq:.3e}  "
            f"uplinks={self.uplinks}  downlinks={self.downlinks}"
        )


def _summarize(fp: str, primitive: Primitive, finals: list[tuple[float, float, int, int]]) -> SummaryRow:
    gaps = np.array([f[0] for f in finals])
    grads = np.array([f[1] for f in finals])
    stderr = float(gaps.std(ddof=1) / math.sqrt(len(gaps))) if len(gaps) >= 2 else None
    return SummaryRow(
        fingerprint=fp,
        primitive=primitive.name,
        seeds=len(gaps),
        mean_gap=float(gaps.mean()),
        stderr_gap=stderr,
        mean_grad_norm_sq=float(grads.mean()),
        uplinks=finals[0][2],
        downlinks=finals[0][3],
    )


def build_objective(cfg: ExperimentConfig, topology, seed: int):
    spec = cfg.objective
    obj_seed = seed if spec.seed is None else spec.seed
    if spec.kind == "quadratic":
        return make_quadratic(spec.d, topology, spec.heterogeneity, spec.L, obj_seed, spec.noise_std)
    return make_logistic(
        spec.d,
        spec.classes,
        spec.samples_per_device,
        topology,
        spec.heterogeneity,
        obj_seed,
        spec.noise_std,
        spec.l2,
    )


def _one_run(args):
    cfg, primitive, seed, overrides = args
    sim = cfg.sim_config(primitive, seed, **overrides)
    topology = build_topology(sim.topology, sim.component_sizes, seed=seed, degree=sim.degree)
    obj = build_objective(cfg, topology, seed)
    return run(sim, obj, topology)


def _map(fn, jobs: list, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _simulate_all(cfg: ExperimentConfig, workers: int, overrides: dict | None = None):
    overrides = overrides or {}
    jobs = [(cfg, prim, seed, overrides) for prim in cfg.primitives for seed in cfg.seeds]
    traces = _map(_one_run, jobs, workers)
    rows = []
    k = 0
    for prim in cfg.primitives:
        group = traces[k : k + len(cfg.seeds)]
        k += len(cfg.seeds)
        finals = [
            (t.records[-1].f_gap, t.records[-1].grad_norm_sq, t.uplinks, t.downlinks) for t in group
        ]
        fp_cfg = replace(cfg, **{k2: v for k2, v in overrides.items() if hasattr(cfg, k2)})
        rows.append(_summarize(fp_cfg.fingerprint(prim), prim, finals))
    return traces, rows


def cmd_simulate(cfg: ExperimentConfig, out: Path, workers: int) -> int:
    traces, rows = _simulate_all(cfg, workers)
    for tr in traces:
        write_trace_csv(tr, out)
    for row in rows:
        print(row.format())
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise InvalidConfig(f"--grid: expected comma-separated numbers, got {text!r}") from None
    if not grid:
        raise InvalidConfig("--grid: empty grid")
    return grid


def _validate_grid(axis: Axis, grid: list[float]) -> None:
    for v in grid:
        if axis is Axis.SERVER_PERIOD and (v < 1 or v != int(v)):
            raise InvalidConfig(f"--grid: server period must be a positive integer, got {v}")
        if axis in (Axis.SAMPLING_RATE, Axis.MIXING_PARAM) and not 0 < v <= 1:
            raise InvalidConfig(f"--grid: {axis.value} values must lie in (0, 1], got {v}")


def cmd_sweep(cfg: ExperimentConfig, out: Path, axis: str, grid_text: str, simulate: bool, workers: int) -> int:
    try:
        ax = Axis.parse(axis)
    except ValueError as exc:
        raise InvalidConfig(f"--axis: {exc}") from None
    grid = _parse_grid(grid_text)
    _validate_grid(ax, grid)
    if cfg.bounds is None:
        raise InvalidConfig("[bounds]: section required for sweeps")
    rows = regime_sweep(cfg.bounds, ax, grid, method=cfg.bounds_method)
    path = write_sweep_csv(rows, out / f"sweep_{ax.value}.csv")
    print(f"wrote {path}")
    for r in rows:
        print(
            f"{ax.value}={r['axis_value']:g}  T_s2s={r['T_s2s']:.4e}  T_s2a={r['T_s2a']:.4e}  "
            f"gamma_s2s={r['gamma_s2s']:.4e}  gamma_s2a={r['gamma_s2a']:.4e}"
        )
    if simulate:
        if ax is Axis.MIXING_PARAM:
            raise InvalidConfig("--simulate: mixing_param cannot be set directly in a simulation")
        sim_path = out / f"sweep_{ax.value}_simulated.csv"
        with open(sim_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis_value", "primitive", "mean_gap", "stderr_gap", "uplinks", "downlinks"])
            for v in grid:
                if ax is Axis.SAMPLING_RATE:
                    over = {"K": max(1, int(round(v * cfg.n)))}
                else:
                    over = {"H": int(v)}
                _, summary = _simulate_all(cfg, workers, over)
                for row in summary:
                    err = "" if row.stderr_gap is None else repr(row.stderr_gap)
                    w.writerow([repr(v), row.primitive, repr(row.mean_gap), err, row.uplinks, row.downlinks])
                    print(f"  {ax.value}={v:g}  " + row.format())
        print(f"wrote {sim_path}")
    return EXIT_OK


def _bounds_report(inputs: BoundInputs, method: str) -> int:
    results, theo = {}, {}
    for prim in Primitive:
        try:
            results[prim] = rounds_to_epsilon(inputs, prim)
            theo[prim] = theorem_rounds(inputs, prim)
        except DivergentAtK1 as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
    s2s, s2a = results[Primitive.S2S], results[Primitive.S2A]
    print(f"inputs: {inputs}")
    for prim, res in results.items():
        gamma, ratio = communication_cost(
            res, prim, inputs.n, inputs.K, inputs.H, s2a if prim is Primitive.S2S else s2s
        )
        t_theo = theo[prim]
        g_theo = (2 * inputs.K if prim is Primitive.S2S else inputs.K + inputs.n) / inputs.H * t_theo
        print(
            f"{prim.name}: explicit T={res.T_rounds} eta*={res.eta_star:.6e} rhs={res.rhs_at_T:.6e} "
            f"gamma={gamma:.6e} ratio_vs_other={ratio:.6f} | theorem T={t_theo:.6e} gamma={g_theo:.6e}"
        )
    if method == "explicit":
        t = {p: float(results[p].T_rounds) for p in Primitive}
    else:
        t = theo
    g = {
        Primitive.S2S: 2 * inputs.K / inputs.H * t[Primitive.S2S],
        Primitive.S2A: (inputs.K + inputs.n) / inputs.H * t[Primitive.S2A],
    }
    print(f"winner_by_T ({method}): {min(Primitive, key=lambda p: (t[p], p.value)).name}")
    print(f"winner_by_messages ({method}): {min(Primitive, key=lambda p: (g[p], p.value)).name}")
    return EXIT_OK


def cmd_bounds(config_path: Path) -> int:
    inputs, method = load_bounds(config_path)
    return _bounds_report(inputs, method)


def cmd_measure_het(cfg: ExperimentConfig, out: Path) -> int:
    seed = cfg.seeds[0]
    topology = build_topology(cfg.topology, cfg.component_sizes, seed=seed, degree=cfg.degree)
    obj = build_objective(cfg, topology, seed)
    W = metropolis_weights(topology)
    proj = component_projector(topology)
    est = measure_heterogeneity(obj, W, proj, rng=np.random.default_rng([seed, 0x4E]))
    p = spectral_mixing_parameter(W).p
    sim = cfg.sim_config(cfg.primitives[0], seed)
    x0 = np.asarray(sim.x0)
    regime = cfg.bounds.regime if cfg.bounds is not None else Regime.CONVEX
    epsilon = cfg.bounds.epsilon if cfg.bounds is not None else 1e-3
    inputs = BoundInputs(
        n=cfg.n,
        K=cfg.K,
        H=cfg.H,
        p=min(max(p, 1e-12), 1.0),
        L=float(obj.L),
        sigma_bar=float(obj.noise_std),
        zeta_intra=est.zeta_intra,
        zeta_inter=est.zeta_inter,
        epsilon=epsilon,
        R0_sq=float(np.sum((x0 - obj.x_star) ** 2)),
        f0=max(float(obj.optimality_gap(x0)), 0.0),
        regime=regime,
    )
    print(f"zeta_intra={est.zeta_intra:.6e}")
    print(f"zeta_inter={est.zeta_inter:.6e}")
    print(f"p={p:.6e}  L={obj.L:.6e}  probes={est.probe_count}")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "measured_bounds.ini"
    path.write_text(bounds_to_ini(inputs, cfg.bounds_method))
    print(f"wrote {path}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="INI configuration file")
    common.add_argument("--out", default=None, help="output directory (default: [run] out)")
    common.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    ap = argparse.ArgumentParser(prog="semidec", description="Semi-decentralized learning simulator and bounds.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run simulations and write trace CSVs")
    sw = sub.add_parser("sweep", parents=[common], help="bound sweep along one axis")
    sw.add_argument("--axis", required=True, help="sampling_rate, server_period or mixing_param")
    sw.add_argument("--grid", required=True, help="comma-separated axis values")
    sw.add_argument("--simulate", action="store_true", help="also simulate every grid point")
    sub.add_parser("bounds", parents=[common], help="iteration and message counts for both primitives")
    sub.add_parser("measure-het", parents=[common], help="estimate heterogeneity and write a bounds config")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "bounds":
            return cmd_bounds(Path(args.config))
        cfg = load_config(args.config, require_run=args.command != "measure-het")
        out = Path(args.out if args.out is not None else cfg.out)
        if args.jobs < 1:
            raise InvalidConfig("--jobs: must be at least 1")
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.axis, args.grid, args.simulate, args.jobs)
        return cmd_measure_het(cfg, out)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteState as exc:
        print(f"diverged: non-finite parameters at round {exc.round}", file=sys.stderr)
        return EXIT_DIVERGED
    except DivergentAtK1 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except SemidecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
