"""JSON run configuration.

A run file looks like::

    {
      "family": "gp1d",
      "lattice": {"s": 5, "q": 0, "n_max": 10},
      "beta": 0.5,
      "initial_state": {"kind": "plane_wave", "n": 0},
      "target_state": {"kind": "squeezed", "x_c": 0, "p_c": 0, "xi": 1.5},
      "time": {"t_f": 7.6, "unit": "dimensionless"},
      "control": {"n_steps": 1520, "phi": 0.0},
      "optimizer": {"seed": 3, "fidelity_goal": 0.99},
      "output_dir": "runs/gp"
    }

See README.md for every key. Errors are reported as :class:`ConfigError`
with the JSON path of the offending entry and, where it can be located,
its line in the file.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .grape import FAMILIES, OptimizerSettings
from .gp import SCHEMES, GPParams
from .lattice1d import Lattice1DParams
from .lattice2d import Lattice2DParams
from .states import TargetSpec
from .units import UnitConversion, to_dimensionless_time

TIME_UNITS = ("dimensionless", "us")
DALTON_KG = 1.66053906660e-27


class ConfigError(ValueError):
    def __init__(self, message, path="", line=None):
        self.path = path
        self.line = line
        where = f" at {path}" if path else ""
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"config error{where}: {message}")


@dataclass(frozen=True)
class TimeSpec:
    t_f: float
    unit: str = "dimensionless"
    wavelength_nm: float = 1064.0
    mass_u: float = 86.909180527

    def dimensionless(self, family):
        if self.unit == "dimensionless":
            return float(self.t_f)
        uc = UnitConversion(self.wavelength_nm * 1e-9, self.mass_u * DALTON_KG)
        return to_dimensionless_time(self.t_f * 1e-6, family, uc)


@dataclass(frozen=True)
class ControlSpec:
    n_steps: int
    optimize: tuple = ()
    # constant phase(s) used by ``propagate`` when no pulse file is given
    phi: tuple = (0.0,)
    pulse_file: str = None


@dataclass(frozen=True)
class PropagateSpec:
    compare_rk4: bool = False
    rk4_substeps: int = 4
    gp_scheme: str = "start"
    betas: tuple = ()


@dataclass(frozen=True)
class BetaScanSpec:
    betas: tuple = ()
    pulse_file: str = None


@dataclass(frozen=True)
class RunConfig:
    family: str
    lattice: dict
    initial_state: TargetSpec
    time: TimeSpec
    control: ControlSpec
    target_state: TargetSpec = None
    beta: float = 0.0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    propagate: PropagateSpec = field(default_factory=PropagateSpec)
    beta_scan: BetaScanSpec = field(default_factory=BetaScanSpec)
    output_dir: str = "output"

    @property
    def channels(self):
        return 3 if self.family == "lattice2d" else 1

    @property
    def t_f(self):
        return self.time.dimensionless(self.family)

    @property
    def optimize_flags(self):
        return self.control.optimize or (True,) * self.channels

    def lattice_params(self):
        if self.family == "lattice2d":
            return Lattice2DParams(**self.lattice)
        return Lattice1DParams(**self.lattice)

    def params(self, beta=None):
        """Dynamics parameters; ``beta`` overrides the configured value (gp1d)."""
        lat = self.lattice_params()
        if self.family == "gp1d":
            return GPParams(lat, self.beta if beta is None else beta)
        return lat

    def with_overrides(self, output_dir=None, seed=None):
        cfg = self
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if seed is not None:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, seed=int(seed)))
        return cfg


_LATTICE_KEYS = {
    "linear1d": ("s", "q", "n_max"),
    "gp1d": ("s", "q", "n_max"),
    "lattice2d": ("s", "M", "N"),
}
_TOP_KEYS = (
    "family",
    "lattice",
    "beta",
    "initial_state",
    "target_state",
    "time",
    "control",
    "optimizer",
    "propagate",
    "beta_scan",
    "output_dir",
)


def _line_of(text, path):
    """Best-effort line number of the last key in ``path``."""
    if text is None:
        return None
    pos = 0
    found = None
    for key in path:
        if isinstance(key, int):
            continue
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            return None if found is None else text.count("\n", 0, found) + 1
        pos = found = idx
    return None if found is None else text.count("\n", 0, found) + 1


class _Reader:
    def __init__(self, text):
        self.text = text

    def fail(self, message, path):
        dotted = ".".join(str(p) if isinstance(p, str) else f"[{p}]" for p in path)
        dotted = dotted.replace(".[", "[")
        raise ConfigError(message, dotted, _line_of(self.text, path))

    def obj(self, value, path, allowed):
        if not isinstance(value, dict):
            self.fail(f"expected an object, got {type(value).__name__}", path)
        for key in value:
            if key not in allowed:
                self.fail(f"unknown key {key!r}; allowed: {', '.join(allowed)}", path + [key])
        return value

    def number(self, value, path, positive=False, nonnegative=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"expected a number, got {json.dumps(value)}", path)
        if not np.isfinite(value):
            self.fail("must be finite", path)
        if positive and not value > 0:
            self.fail(f"must be positive, got {value}", path)
        if nonnegative and value < 0:
            self.fail(f"must be >= 0, got {value}", path)
        return float(value)

    def integer(self, value, path, minimum=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(f"expected an integer, got {json.dumps(value)}", path)
        if minimum is not None and value < minimum:
            self.fail(f"must be >= {minimum}, got {value}", path)
        return value

    def boolean(self, value, path):
        if not isinstance(value, bool):
            self.fail(f"expected true or false, got {json.dumps(value)}", path)
        return value

    def string(self, value, path, choices=None):
        if not isinstance(value, str):
            self.fail(f"expected a string, got {json.dumps(value)}", path)
        if choices is not None and value not in choices:
            self.fail(f"must be one of {', '.join(choices)}; got {value!r}", path)
        return value

    def amplitude(self, value, path):
        if isinstance(value, list):
            if len(value) != 2:
                self.fail("complex amplitude must be [re, im]", path)
            return complex(self.number(value[0], path + [0]), self.number(value[1], path + [1]))
        return complex(self.number(value, path))

    def state(self, value, path, family):
        value = self.obj(value, path, ("kind", "n", "m", "components", "x_c", "p_c", "xi"))
        if "kind" not in value:
            self.fail("missing 'kind'", path)
        kind = self.string(value["kind"], path + ["kind"], TargetSpec.KINDS)
        if kind.endswith("_2d") != (family == "lattice2d"):
            self.fail(f"state kind {kind!r} does not fit family {family!r}", path + ["kind"])
        kw = {"kind": kind}
        for key in ("n", "m"):
            if key in value:
                kw[key] = self.integer(value[key], path + [key])
        for key in ("x_c", "p_c"):
            if key in value:
                kw[key] = self.number(value[key], path + [key])
        if "xi" in value:
            kw["xi"] = self.number(value["xi"], path + ["xi"], positive=True)
        if kind.startswith("superposition"):
            comps = value.get("components")
            if not isinstance(comps, list) or not comps:
                self.fail("superposition needs a nonempty 'components' list", path + ["components"])
            parsed = []
            for i, item in enumerate(comps):
                ipath = path + ["components", i]
                if not isinstance(item, list) or len(item) != 2:
                    self.fail("component must be [index, amplitude]", ipath)
                index, amp = item
                if kind == "superposition_2d":
                    if not isinstance(index, list) or len(index) != 2:
                        self.fail("2D component index must be [m, n]", ipath)
                    index = (self.integer(index[0], ipath + [0]), self.integer(index[1], ipath + [0]))
                else:
                    index = self.integer(index, ipath)
                parsed.append((index, self.amplitude(amp, ipath + [1])))
            kw["components"] = tuple(parsed)
        return TargetSpec(**kw)


def parse_config(data, text=None):
    """Validate a decoded JSON object into a :class:`RunConfig`."""
    rd = _Reader(text)
    data = rd.obj(data, [], _TOP_KEYS)
    for key in ("family", "lattice", "initial_state", "time", "control"):
        if key not in data:
            rd.fail(f"missing required key {key!r}", [])
    family = rd.string(data["family"], ["family"], FAMILIES)

    lat = rd.obj(data["lattice"], ["lattice"], _LATTICE_KEYS[family])
    lattice = {}
    if "s" not in lat:
        rd.fail("missing lattice depth 's'", ["lattice"])
    lattice["s"] = rd.number(lat["s"], ["lattice", "s"], nonnegative=True)
    if family == "lattice2d":
        for key in ("M", "N"):
            if key in lat:
                lattice[key] = rd.integer(lat[key], ["lattice", key], minimum=1)
    else:
        if "q" in lat:
            lattice["q"] = rd.number(lat["q"], ["lattice", "q"])
            if abs(lattice["q"]) > 0.5:
                rd.fail("quasi-momentum must lie in [-0.5, 0.5]", ["lattice", "q"])
        if "n_max" in lat:
            lattice["n_max"] = rd.integer(lat["n_max"], ["lattice", "n_max"], minimum=0)

    beta = 0.0
    if "beta" in data:
        if family != "gp1d":
            rd.fail("'beta' only applies to family gp1d", ["beta"])
        beta = rd.number(data["beta"], ["beta"])

    initial = rd.state(data["initial_state"], ["initial_state"], family)
    target = None
    if data.get("target_state") is not None:
        target = rd.state(data["target_state"], ["target_state"], family)

    tm = rd.obj(data["time"], ["time"], ("t_f", "unit", "wavelength_nm", "mass_u"))
    if "t_f" not in tm:
        rd.fail("missing 't_f'", ["time"])
    time_kw = {"t_f": rd.number(tm["t_f"], ["time", "t_f"], positive=True)}
    if "unit" in tm:
        time_kw["unit"] = rd.string(tm["unit"], ["time", "unit"], TIME_UNITS)
    for key in ("wavelength_nm", "mass_u"):
        if key in tm:
            time_kw[key] = rd.number(tm[key], ["time", key], positive=True)
    time = TimeSpec(**time_kw)

    channels = 3 if family == "lattice2d" else 1
    ct = rd.obj(data["control"], ["control"], ("n_steps", "optimize", "phi", "pulse_file"))
    if "n_steps" not in ct:
        rd.fail("missing 'n_steps'", ["control"])
    ctl = {"n_steps": rd.integer(ct["n_steps"], ["control", "n_steps"], minimum=1)}
    if "optimize" in ct:
        flags = ct["optimize"]
        if not isinstance(flags, list) or len(flags) != channels:
            rd.fail(f"expected a list of {channels} booleans", ["control", "optimize"])
        ctl["optimize"] = tuple(rd.boolean(f, ["control", "optimize", i]) for i, f in enumerate(flags))
        if not any(ctl["optimize"]):
            rd.fail("at least one channel must be optimizable", ["control", "optimize"])
    if "phi" in ct:
        phi = ct["phi"]
        phi = phi if isinstance(phi, list) else [phi]
        if len(phi) not in (1, channels):
            rd.fail(f"expected 1 or {channels} phase values", ["control", "phi"])
        phi = [rd.number(v, ["control", "phi", i]) for i, v in enumerate(phi)]
        ctl["phi"] = tuple(phi * channels if len(phi) == 1 else phi)
    elif channels == 3:
        ctl["phi"] = (0.0, 0.0, 0.0)
    if ct.get("pulse_file") is not None:
        ctl["pulse_file"] = rd.string(ct["pulse_file"], ["control", "pulse_file"])
    control = ControlSpec(**ctl)

    opt_kw = {}
    if "optimizer" in data:
        allowed = tuple(f.name for f in fields(OptimizerSettings))
        op = rd.obj(data["optimizer"], ["optimizer"], allowed)
        defaults = OptimizerSettings()
        for key, value in op.items():
            path = ["optimizer", key]
            default = getattr(defaults, key)
            if key == "max_seconds":
                opt_kw[key] = None if value is None else rd.number(value, path)
            elif isinstance(default, bool):
                opt_kw[key] = rd.boolean(value, path)
            elif isinstance(default, int):
                opt_kw[key] = rd.integer(value, path, minimum=0)
            elif isinstance(default, float):
                opt_kw[key] = rd.number(value, path)
            else:
                opt_kw[key] = rd.string(value, path)
        try:
            settings = OptimizerSettings(**opt_kw)
        except ValueError as exc:
            rd.fail(str(exc), ["optimizer"])
    else:
        settings = OptimizerSettings()

    prop = PropagateSpec()
    if "propagate" in data:
        pr = rd.obj(data["propagate"], ["propagate"], ("compare_rk4", "rk4_substeps", "gp_scheme", "betas"))
        kw = {}
        if "compare_rk4" in pr:
            kw["compare_rk4"] = rd.boolean(pr["compare_rk4"], ["propagate", "compare_rk4"])
        if "rk4_substeps" in pr:
            kw["rk4_substeps"] = rd.integer(pr["rk4_substeps"], ["propagate", "rk4_substeps"], minimum=1)
        if "gp_scheme" in pr:
            kw["gp_scheme"] = rd.string(pr["gp_scheme"], ["propagate", "gp_scheme"], SCHEMES)
        if "betas" in pr:
            kw["betas"] = _number_list(rd, pr["betas"], ["propagate", "betas"])
        prop = PropagateSpec(**kw)

    scan = BetaScanSpec()
    if "beta_scan" in data:
        bs = rd.obj(data["beta_scan"], ["beta_scan"], ("betas", "pulse_file"))
        kw = {}
        if "betas" in bs:
            kw["betas"] = _number_list(rd, bs["betas"], ["beta_scan", "betas"])
        if bs.get("pulse_file") is not None:
            kw["pulse_file"] = rd.string(bs["pulse_file"], ["beta_scan", "pulse_file"])
        scan = BetaScanSpec(**kw)

    output_dir = rd.string(data.get("output_dir", "output"), ["output_dir"])
    cfg = RunConfig(
        family=family,
        lattice=lattice,
        initial_state=initial,
        target_state=target,
        time=time,
        control=control,
        beta=beta,
        optimizer=settings,
        propagate=prop,
        beta_scan=scan,
        output_dir=output_dir,
    )
    _check_consistency(cfg, rd)
    return cfg


def _number_list(rd, value, path):
    if not isinstance(value, list) or not value:
        rd.fail("expected a nonempty list of numbers", path)
    return tuple(rd.number(v, path + [i]) for i, v in enumerate(value))


def _check_consistency(cfg, rd):
    try:
        lat = cfg.lattice_params()
    except ValueError as exc:
        rd.fail(str(exc), ["lattice"])
    for key in ("initial_state", "target_state"):
        spec = getattr(cfg, key)
        if spec is None:
            continue
        try:
            spec.build(lat)
        except (IndexError, ValueError) as exc:
            rd.fail(str(exc), [key])


def load_config(path):
    """Read and validate a JSON run file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return loads_config(text)


def loads_config(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
    return parse_config(data, text)


def _amp_to_json(a):
    a = complex(a)
    return a.real if a.imag == 0 else [a.real, a.imag]


def _state_to_json(spec):
    out = {"kind": spec.kind}
    if spec.kind in ("plane_wave", "plane_wave_2d"):
        out["n"] = spec.n
    if spec.kind == "plane_wave_2d":
        out["m"] = spec.m
    if spec.kind == "squeezed":
        out.update(x_c=spec.x_c, p_c=spec.p_c, xi=spec.xi)
    if spec.kind == "superposition":
        out["components"] = [[i, _amp_to_json(a)] for i, a in spec.components]
    if spec.kind == "superposition_2d":
        out["components"] = [[list(i), _amp_to_json(a)] for i, a in spec.components]
    return out


def config_to_dict(cfg):
    """Inverse of :func:`parse_config`: ``parse_config(config_to_dict(c)) == c``."""
    out = {
        "family": cfg.family,
        "lattice": dict(cfg.lattice),
        "initial_state": _state_to_json(cfg.initial_state),
        "time": asdict(cfg.time),
        "control": {"n_steps": cfg.control.n_steps, "phi": list(cfg.control.phi)},
        "optimizer": asdict(cfg.optimizer),
        "propagate": {
            "compare_rk4": cfg.propagate.compare_rk4,
            "rk4_substeps": cfg.propagate.rk4_substeps,
            "gp_scheme": cfg.propagate.gp_scheme,
        },
        "beta_scan": {},
        "output_dir": cfg.output_dir,
    }
    if cfg.family == "gp1d":
        out["beta"] = cfg.beta
    if cfg.target_state is not None:
        out["target_state"] = _state_to_json(cfg.target_state)
    if cfg.control.optimize:
        out["control"]["optimize"] = list(cfg.control.optimize)
    if cfg.control.pulse_file is not None:
        out["control"]["pulse_file"] = cfg.control.pulse_file
    if cfg.propagate.betas:
        out["propagate"]["betas"] = list(cfg.propagate.betas)
    if cfg.beta_scan.betas:
        out["beta_scan"]["betas"] = list(cfg.beta_scan.betas)
    if cfg.beta_scan.pulse_file is not None:
        out["beta_scan"]["pulse_file"] = cfg.beta_scan.pulse_file
    return out


def dumps_config(cfg):
    return json.dumps(config_to_dict(cfg), indent=2)
