"""YAML run configuration: schema, validation and round-trip serialization.

Key schema (all sections optional except ``model``, ``noise`` and ``sim``)::

    model:
      kind: dyadic | goy | sabra | linear
      nu: 0.01
      k0: 1.0
      lambda: 2.0
      n_shells: 20
      sabra_abc: [1.0, -0.5, -0.5]      # sabra only
    noise:
      mode: first_shell | explicit
      sigma: 1.0                        # first_shell
      sigma_list: [1.0, 0.0, ...]       # explicit, one per shell
      seed: 0
    sim:
      scheme: ou_split | em
      dt: 1.0e-4
      t_final: 100.0
      burn_in_fraction: 0.2
      sample_stride: 10
      ensemble_size: 1
    analysis:
      p_list: [2, 3]
      window: auto                      # or {n_minus: 2, n_plus: 8}
    output:
      dir: out
      formats: [csv, json]              # optionally also: states

Unknown keys are errors.  Every violated constraint is collected and
reported together in one :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .analysis import InertialWindow
from .grid import ShellGrid
from .integrator import ModelSpec, StepScheme
from .noise import NoiseSpec
from .nonlinearity import ModelKind

FORMATS = ("csv", "json", "states")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class ModelConfig:
    kind: str = "dyadic"
    nu: float = 0.01
    k0: float = 1.0
    lam: float = 2.0
    n_shells: int = 20
    sabra_abc: list | None = None


@dataclass
class NoiseConfig:
    mode: str = "first_shell"
    sigma: float | None = 1.0
    sigma_list: list | None = None
    seed: int = 0


@dataclass
class SimConfig:
    scheme: str = "ou_split"
    dt: float = 1e-4
    t_final: float = 100.0
    burn_in_fraction: float = 0.2
    sample_stride: int = 10
    ensemble_size: int = 1


@dataclass
class AnalysisConfig:
    p_list: list = field(default_factory=lambda: [2.0, 3.0])
    window: object = "auto"


@dataclass
class OutputConfig:
    dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- domain objects ----------------------------------------------------

    def grid(self) -> ShellGrid:
        m = self.model
        return ShellGrid(m.k0, m.lam, m.n_shells)

    def kind(self) -> ModelKind:
        m = self.model
        if m.kind == "sabra" and m.sabra_abc is not None:
            return ModelKind.sabra(*m.sabra_abc)
        return ModelKind(m.kind)

    def noise_spec(self, stream_id: int = 0) -> NoiseSpec:
        n = self.noise
        if n.mode == "first_shell":
            return NoiseSpec.first_shell(self.model.n_shells, n.sigma, n.seed, stream_id)
        return NoiseSpec(tuple(n.sigma_list), n.seed, stream_id)

    def model_spec(self, stream_id: int = 0) -> ModelSpec:
        return ModelSpec(self.kind(), self.model.nu, self.grid(), self.noise_spec(stream_id))

    def scheme(self) -> StepScheme:
        return StepScheme(self.sim.scheme, self.sim.dt)

    def window(self):
        w = self.analysis.window
        return "auto" if w == "auto" else InertialWindow(int(w["n_minus"]), int(w["n_plus"]))

    def with_seed(self, seed: int) -> "RunConfig":
        out = copy.deepcopy(self)
        out.noise.seed = int(seed)
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["lambda"] = d["model"].pop("lam")
        if d["model"]["sabra_abc"] is None:
            del d["model"]["sabra_abc"]
        for key in ("sigma", "sigma_list"):
            if d["noise"][key] is None:
                del d["noise"][key]
        return d

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def physics_hash(self) -> str:
        """Hash of every setting that shapes the sampled path and its statistics.

        ``t_final`` and the output section are excluded so that a run may be
        extended by resuming.
        """
        d = self.to_dict()
        d["sim"].pop("t_final")
        d.pop("output")
        d["analysis"].pop("window")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "model": ("kind", "nu", "k0", "lambda", "n_shells", "sabra_abc"),
    "noise": ("mode", "sigma", "sigma_list", "seed"),
    "sim": ("scheme", "dt", "t_final", "burn_in_fraction", "sample_stride", "ensemble_size"),
    "analysis": ("p_list", "window"),
    "output": ("dir", "formats"),
}
_REQUIRED = ("model", "noise", "sim")


def _num(errors, where, value, kind=float):
    if isinstance(value, bool) or value is None:
        errors.append(f"{where}: expected a number, got {value!r}")
        return None
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        errors.append(f"{where}: expected {'an integer' if kind is int else 'a number'}, got {value!r}")
        return None


def _try(errors, where, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def config_from_dict(raw) -> RunConfig:
    """Validate a parsed mapping into a :class:`RunConfig`; raise :class:`ConfigError` listing every problem."""
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    for key in raw:
        if key not in _SECTIONS:
            errors.append(f"unknown section {key!r}")
    for sec in _REQUIRED:
        if sec not in raw:
            errors.append(f"missing section {sec!r}")
    secs = {}
    for sec, keys in _SECTIONS.items():
        body = raw.get(sec) or {}
        if not isinstance(body, dict):
            errors.append(f"{sec}: must be a mapping")
            body = {}
        for key in body:
            if key not in keys:
                errors.append(f"{sec}.{key}: unknown key")
        secs[sec] = body
    cfg = RunConfig()

    m, mc = secs["model"], cfg.model
    mc.kind = str(m.get("kind", mc.kind))
    for key, attr, kind in (("nu", "nu", float), ("k0", "k0", float), ("lambda", "lam", float),
                            ("n_shells", "n_shells", int)):
        if key in m:
            val = _num(errors, f"model.{key}", m[key], kind)
            if val is not None:
                setattr(mc, attr, val)
    if "sabra_abc" in m:
        abc = m["sabra_abc"]
        if not (isinstance(abc, list) and len(abc) == 3):
            errors.append("model.sabra_abc: expected a list of three numbers")
        else:
            vals = [_num(errors, f"model.sabra_abc[{i}]", x) for i, x in enumerate(abc)]
            if None not in vals:
                mc.sabra_abc = vals
        if mc.kind != "sabra":
            errors.append("model.sabra_abc: only valid with kind: sabra")
    grid = _try(errors, "model", lambda: ShellGrid(mc.k0, mc.lam, mc.n_shells))
    kind = _try(errors, "model", cfg.kind)
    if not (mc.nu >= 0):
        errors.append("model.nu: viscosity must be nonnegative")

    n, nc = secs["noise"], cfg.noise
    nc.mode = str(n.get("mode", nc.mode))
    if nc.mode == "first_shell":
        if "sigma_list" in n:
            errors.append("noise.sigma_list: not allowed with mode: first_shell")
        if "sigma" in n:
            nc.sigma = _num(errors, "noise.sigma", n["sigma"])
    elif nc.mode == "explicit":
        nc.sigma = None
        if "sigma" in n:
            errors.append("noise.sigma: not allowed with mode: explicit (use sigma_list)")
        sl = n.get("sigma_list")
        if not isinstance(sl, list):
            errors.append("noise.sigma_list: required list with mode: explicit")
        else:
            vals = [_num(errors, f"noise.sigma_list[{i}]", x) for i, x in enumerate(sl)]
            if None not in vals:
                nc.sigma_list = vals
                if grid is not None and len(vals) != grid.n_shells:
                    errors.append(f"noise.sigma_list: expected {grid.n_shells} entries, got {len(vals)}")
    else:
        errors.append(f"noise.mode: expected first_shell or explicit, got {nc.mode!r}")
    if "seed" in n:
        seed = _num(errors, "noise.seed", n["seed"], int)
        if seed is not None:
            nc.seed = seed
    if grid is not None and nc.mode in ("first_shell", "explicit") and (nc.sigma is not None or nc.sigma_list):
        _try(errors, "noise", lambda: cfg.noise_spec())

    s, sc = secs["sim"], cfg.sim
    sc.scheme = str(s.get("scheme", sc.scheme))
    for key, kind in (("dt", float), ("t_final", float), ("burn_in_fraction", float),
                      ("sample_stride", int), ("ensemble_size", int)):
        if key in s:
            val = _num(errors, f"sim.{key}", s[key], kind)
            if val is not None:
                setattr(sc, key, val)
    _try(errors, "sim", cfg.scheme)
    if not sc.t_final > 0:
        errors.append("sim.t_final: must be positive")
    if not 0 <= sc.burn_in_fraction < 1:
        errors.append("sim.burn_in_fraction: must lie in [0, 1)")
    if sc.sample_stride < 1:
        errors.append("sim.sample_stride: must be >= 1")
    if sc.ensemble_size < 1:
        errors.append("sim.ensemble_size: must be >= 1")

    a, ac = secs["analysis"], cfg.analysis
    if "p_list" in a:
        pl = a["p_list"]
        if not isinstance(pl, list) or not pl:
            errors.append("analysis.p_list: expected a nonempty list")
        else:
            vals = [_num(errors, f"analysis.p_list[{i}]", x) for i, x in enumerate(pl)]
            if None not in vals:
                if any(v <= 0 for v in vals):
                    errors.append("analysis.p_list: orders must be positive")
                if len(set(vals)) != len(vals):
                    errors.append("analysis.p_list: duplicate orders")
                ac.p_list = vals
    if "window" in a:
        w = a["window"]
        if w == "auto":
            ac.window = "auto"
        elif isinstance(w, dict) and set(w) == {"n_minus", "n_plus"}:
            lo = _num(errors, "analysis.window.n_minus", w["n_minus"], int)
            hi = _num(errors, "analysis.window.n_plus", w["n_plus"], int)
            if lo is not None and hi is not None:
                ac.window = {"n_minus": lo, "n_plus": hi}
                win = _try(errors, "analysis.window", lambda: InertialWindow(lo, hi))
                if win is not None and grid is not None:
                    _try(errors, "analysis.window", lambda: win.check(grid.n_shells))
        else:
            errors.append("analysis.window: expected 'auto' or {n_minus, n_plus}")

    o, oc = secs["output"], cfg.output
    if "dir" in o:
        oc.dir = str(o["dir"])
    if "formats" in o:
        fm = o["formats"]
        if not isinstance(fm, list) or any(f not in FORMATS for f in fm):
            errors.append(f"output.formats: expected a list drawn from {list(FORMATS)}")
        else:
            oc.formats = [str(f) for f in fm]

    if not errors and kind is not None and grid is not None:
        _try(errors, "model", cfg.model_spec)
    if errors:
        raise ConfigError(errors)
    return cfg


def loads_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML parse error: {exc}"])
    return config_from_dict(raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    return loads_config(path.read_text())
