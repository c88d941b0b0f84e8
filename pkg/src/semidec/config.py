"""INI experiment configuration.

Four flat sections are recognised: ``[network]``, ``[objective]``, ``[run]``
and ``[bounds]``. Validation errors name the offending ``[section] key``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

from .bounds import BoundInputs, Regime
from .engine import SimConfig
from .errors import InvalidConfig, SemidecError
from .objectives import HeterogeneityConfig
from .operators import Primitive
from .topology import TopologyKind

__all__ = ["ObjectiveSpec", "ExperimentConfig", "load_config", "load_bounds", "bounds_to_ini", "SEED_ENV"]

SEED_ENV = "SEMIDEC_SEED"


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "quadratic"
    d: int = 10
    L: float = 1.0
    noise_std: float = 0.0
    intra_scale: float = 0.0
    inter_scale: float = 0.0
    dirichlet_alpha: float | None = None
    disjoint_classes: bool = False
    classes: int = 10
    samples_per_device: int = 20
    l2: float = 1e-2
    seed: int | None = None

    @property
    def heterogeneity(self) -> HeterogeneityConfig:
        return HeterogeneityConfig(
            intra_scale=self.intra_scale,
            inter_scale=self.inter_scale,
            dirichlet_alpha=self.dirichlet_alpha,
            disjoint_classes=self.disjoint_classes,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    component_sizes: tuple[int, ...]
    topology: TopologyKind
    degree: int | None
    time_varying: bool
    objective: ObjectiveSpec
    primitives: tuple[Primitive, ...]
    K: int
    H: int
    T: int
    eta: float
    seeds: tuple[int, ...]
    trace_every: int = 1
    x0: float | tuple[float, ...] = 0.0
    out: str = "results"
    bounds: BoundInputs | None = None
    bounds_method: str = "theorem"

    @property
    def n(self) -> int:
        return sum(self.component_sizes)

    def sim_config(self, primitive: Primitive, seed: int, **overrides) -> SimConfig:
        d = self.objective.d if self.objective.kind == "quadratic" else self.objective.d * self.objective.classes
        x0 = self.x0 if isinstance(self.x0, tuple) else (float(self.x0),) * d
        kw = dict(
            component_sizes=self.component_sizes,
            topology=self.topology,
            primitive=primitive,
            K=self.K,
            H=self.H,
            T=self.T,
            eta=self.eta,
            seed=seed,
            time_varying=self.time_varying,
            trace_every=self.trace_every,
            degree=self.degree,
            x0=x0,
        )
        kw.update(overrides)
        return SimConfig(**kw)

    def fingerprint(self, primitive: Primitive | None = None) -> str:
        """Short hash of everything except the seed list and output directory."""
        payload = {
            "component_sizes": self.component_sizes,
            "topology": self.topology.value,
            "degree": self.degree,
            "time_varying": self.time_varying,
            "objective": asdict(self.objective),
            "K": self.K,
            "H": self.H,
            "T": self.T,
            "eta": self.eta,
            "trace_every": self.trace_every,
            "x0": self.x0,
            "primitive": None if primitive is None else primitive.value,
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


class _Section:
    """Typed getters that report ``[section] key`` on failure."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.data = parser[name] if parser.has_section(name) else {}

    def _raw(self, key, default, required):
        if key in self.data:
            return self.data[key].strip()
        if required:
            raise InvalidConfig(f"[{self.name}] {key}: missing required key")
        return default

    def _conv(self, key, fn, default, required, what):
        raw = self._raw(key, None, required)
        if raw is None:
            return default
        try:
            return fn(raw)
        except (ValueError, TypeError):
            raise InvalidConfig(f"[{self.name}] {key}: expected {what}, got {raw!r}") from None

    def str(self, key, default=None, required=False):
        return self._raw(key, default, required)

    def int(self, key, default=None, required=False):
        return self._conv(key, int, default, required, "an integer")

    def float(self, key, default=None, required=False):
        return self._conv(key, float, default, required, "a number")

    def bool(self, key, default=False):
        raw = self._raw(key, None, False)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidConfig(f"[{self.name}] {key}: expected a boolean, got {raw!r}")

    def ints(self, key, default=None, required=False):
        return self._conv(
            key, lambda s: tuple(int(v) for v in s.replace(" ", "").split(",") if v), default, required,
            "a comma-separated list of integers",
        )

    def floats(self, key, default=None, required=False):
        return self._conv(
            key, lambda s: tuple(float(v) for v in s.replace(" ", "").split(",") if v), default, required,
            "a comma-separated list of numbers",
        )


def _read(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from None
    except configparser.ParsingError as exc:
        where = "; ".join(f"line {ln}: {text.strip()!r}" for ln, text in exc.errors)
        raise InvalidConfig(f"{path}: cannot parse {where}") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        prefix = f"{path}: line {line}: " if line is not None else f"{path}: "
        raise InvalidConfig(prefix + str(exc).splitlines()[0]) from None
    unknown = set(parser.sections()) - {"network", "objective", "run", "bounds"}
    if unknown:
        raise InvalidConfig(f"unknown section(s): {', '.join(sorted(unknown))}")
    return parser


def _guard(section: str, key: str, fn):
    try:
        return fn()
    except InvalidConfig as exc:
        if str(exc).startswith("["):
            raise
        raise InvalidConfig(f"[{section}] {key}: {exc}") from None
    except (SemidecError, ValueError) as exc:
        raise InvalidConfig(f"[{section}] {key}: {exc}") from None


def _parse_bounds(parser, defaults: dict) -> BoundInputs | None:
    b = _Section(parser, "bounds")
    if not parser.has_section("bounds"):
        return None

    def get_int(key):
        v = b.int(key, defaults.get(key))
        if v is None:
            raise InvalidConfig(f"[bounds] {key}: missing required key")
        return v

    n, K, H = get_int("n"), get_int("K"), get_int("H")
    if not 1 <= K <= n:
        raise InvalidConfig(f"[bounds] K: must satisfy 1 <= K <= n={n}, got {K}")
    p = b.float("p", required=True)
    if not 0 < p <= 1:
        raise InvalidConfig(f"[bounds] p: must lie in (0, 1], got {p}")
    regime = b.str("regime", "nonconvex")
    _guard("bounds", "regime", lambda: Regime.parse(regime))
    kwargs = dict(
        n=n,
        K=K,
        H=H,
        p=p,
        L=b.float("L", defaults.get("L", 1.0)),
        sigma_bar=b.float("sigma_bar", defaults.get("sigma_bar", 0.0)),
        zeta_intra=b.float("zeta_intra", 0.0),
        zeta_inter=b.float("zeta_inter", 0.0),
        epsilon=b.float("epsilon", 1e-3),
        R0_sq=b.float("R0_sq", 1.0),
        f0=b.float("f0", 1.0),
        regime=regime,
    )
    for key in ("L", "epsilon"):
        if not kwargs[key] > 0:
            raise InvalidConfig(f"[bounds] {key}: must be positive, got {kwargs[key]}")
    for key in ("sigma_bar", "zeta_intra", "zeta_inter", "R0_sq", "f0"):
        if kwargs[key] < 0:
            raise InvalidConfig(f"[bounds] {key}: must be nonnegative, got {kwargs[key]}")
    return _guard("bounds", "n", lambda: BoundInputs(**kwargs))


def load_bounds(path: str | Path) -> tuple[BoundInputs, str]:
    """Read only the ``[bounds]`` section; returns the inputs and the evaluator name."""
    parser = _read(path)
    if not parser.has_section("bounds"):
        raise InvalidConfig("[bounds]: section missing")
    method = _Section(parser, "bounds").str("method", "theorem")
    if method not in ("theorem", "explicit"):
        raise InvalidConfig(f"[bounds] method: expected theorem or explicit, got {method!r}")
    # Missing sizes fall back to the network and run sections.
    defaults = {}
    sizes = _Section(parser, "network").ints("component_sizes", None)
    if sizes:
        defaults["n"] = sum(sizes)
    run = _Section(parser, "run")
    for key in ("K", "H"):
        v = run.int(key, None)
        if v is not None:
            defaults[key] = v
    ob = _Section(parser, "objective")
    defaults["L"] = ob.float("L", 1.0)
    defaults["sigma_bar"] = ob.float("noise_std", 0.0)
    return _parse_bounds(parser, defaults), method


def load_config(path: str | Path, require_run: bool = True) -> ExperimentConfig:
    """Parse and validate a full experiment configuration."""
    parser = _read(path)
    net = _Section(parser, "network")
    sizes = net.ints("component_sizes", required=True)
    if not sizes or min(sizes) < 1:
        raise InvalidConfig(f"[network] component_sizes: must be positive integers, got {sizes}")
    topo = _guard("network", "topology", lambda: TopologyKind.parse(net.str("topology", "ring")))
    degree = net.int("degree", None)
    time_varying = net.bool("time_varying", False)
    n = sum(sizes)

    ob = _Section(parser, "objective")
    kind = ob.str("kind", "quadratic").lower()
    if kind not in ("quadratic", "logistic"):
        raise InvalidConfig(f"[objective] kind: expected quadratic or logistic, got {kind!r}")
    alpha = ob.str("dirichlet_alpha", None)
    if alpha is not None:
        alpha = None if alpha.lower() in ("none", "iid", "") else ob.float("dirichlet_alpha")
        if alpha is not None and not alpha > 0:
            raise InvalidConfig(f"[objective] dirichlet_alpha: must be positive, got {alpha}")
    spec = ObjectiveSpec(
        kind=kind,
        d=ob.int("d", 10),
        L=ob.float("L", 1.0),
        noise_std=ob.float("noise_std", 0.0),
        intra_scale=ob.float("intra_scale", 0.0),
        inter_scale=ob.float("inter_scale", 0.0),
        dirichlet_alpha=alpha,
        disjoint_classes=ob.bool("disjoint_classes", False),
        classes=ob.int("classes", 10),
        samples_per_device=ob.int("samples_per_device", 20),
        l2=ob.float("l2", 1e-2),
        seed=ob.int("seed", None),
    )
    for key in ("d", "classes", "samples_per_device"):
        if getattr(spec, key) < 1:
            raise InvalidConfig(f"[objective] {key}: must be at least 1")
    for key in ("noise_std", "intra_scale", "inter_scale", "l2"):
        if getattr(spec, key) < 0:
            raise InvalidConfig(f"[objective] {key}: must be nonnegative")
    if not spec.L > 0:
        raise InvalidConfig("[objective] L: must be positive")

    run = _Section(parser, "run")
    prim_raw = run.str("primitives", "S2S,S2A")
    primitives = tuple(
        _guard("run", "primitives", lambda v=v: Primitive.parse(v)) for v in prim_raw.split(",") if v.strip()
    )
    if not primitives:
        raise InvalidConfig("[run] primitives: empty list")
    K = run.int("K", None, required=require_run)
    K = 1 if K is None else K
    if not 1 <= K <= n:
        raise InvalidConfig(f"[run] K: must satisfy 1 <= K <= n={n}, got {K}")
    H = run.int("H", 1)
    if H < 1:
        raise InvalidConfig(f"[run] H: must be at least 1, got {H}")
    T = run.int("T", None, required=require_run)
    T = 1 if T is None else T
    if T < 1:
        raise InvalidConfig(f"[run] T: must be at least 1, got {T}")
    eta = run.float("eta", None, required=require_run)
    eta = 0.1 if eta is None else eta
    if not (eta >= 0 and math.isfinite(eta)):
        raise InvalidConfig(f"[run] eta: must be a finite nonnegative number, got {eta}")
    seeds = run.ints("seeds", (0,))
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            seeds = tuple(int(v) for v in env.replace(" ", "").split(",") if v)
        except ValueError:
            raise InvalidConfig(f"{SEED_ENV}: expected a comma-separated list of integers, got {env!r}") from None
    if not seeds:
        raise InvalidConfig("[run] seeds: need at least one seed")
    trace_every = run.int("trace_every", 1)
    if trace_every < 1:
        raise InvalidConfig("[run] trace_every: must be at least 1")
    x0_vals = run.floats("x0", (0.0,))
    x0 = x0_vals[0] if len(x0_vals) == 1 else x0_vals

    bounds = _parse_bounds(
        parser, {"n": n, "K": K, "H": H, "L": spec.L, "sigma_bar": spec.noise_std}
    )
    method = _Section(parser, "bounds").str("method", "theorem")
    if method not in ("theorem", "explicit"):
        raise InvalidConfig(f"[bounds] method: expected theorem or explicit, got {method!r}")

    return ExperimentConfig(
        component_sizes=sizes,
        topology=topo,
        degree=degree,
        time_varying=time_varying,
        objective=spec,
        primitives=primitives,
        K=K,
        H=H,
        T=T,
        eta=eta,
        seeds=seeds,
        trace_every=trace_every,
        x0=x0,
        out=run.str("out", "results"),
        bounds=bounds,
        bounds_method=method,
    )


def bounds_to_ini(inputs: BoundInputs, method: str = "theorem") -> str:
    """Serialize bound inputs as a ``[bounds]`` section."""
    lines = ["[bounds]"]
    for key in ("n", "K", "H", "p", "L", "sigma_bar", "zeta_intra", "zeta_inter", "epsilon", "R0_sq", "f0"):
        val = getattr(inputs, key)
        lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    lines.append(f"regime = {inputs.regime.value}")
    lines.append(f"method = {method}")
    return "\n".join(lines) + "\n"
