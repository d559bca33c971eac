"""Run configuration of the command-line pipeline.

A config is a YAML (or JSON) mapping::

    seed: 1                      # mandatory master seed
    simulator: toy               # toy | heston | sir, or a mapping
                                 #   {name: heston, settings: {dt: 0.004}}
    data: samples.csv            # alternatively: fit on an external CSV, which
    inputs:                      #   needs the input marginals
      - {name: x1, kind: uniform, a: 0, b: 1}
      - {name: x2, kind: gaussian, mu: 0, sigma: 1}
    design: {N: 1000, method: lhs, replications: 1}
    repetitions: 10              # study only; N may then be a list
    fit: {...}                   # GlamFitConfig fields
    sensitivity:
      classical: true
      qois: [mean, std, "quantile(0.95)", entropy]
      method: pce                # pce | pickfreeze
      max_order: 1
      n_mc: 100000               # pick-freeze sample size
      n_boot: 0
      level: 0.95
      pce: {...}                 # PceSettings fields
    errors: {n_test: 100000, qoi_points: 1000, qoi_reps: 1000, snr: true}
    reference: {n_points: 1000, n_reps: 1000, n_mc: 10000, qois: [...], classical: true,
                kinds: [first, total]}

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import DomainError
from .glam import GlamFitConfig
from .io import InputFileError, config_hash
from .pce import InputModel
from .sensitivity import PceSettings, QoiSpec
from .simulators import SIMULATOR_NAMES, Simulator, get_simulator

TOP_KEYS = {"seed", "simulator", "data", "inputs", "design", "repetitions", "fit", "sensitivity",
            "errors", "reference"}
DESIGN_KEYS = {"N", "method", "replications"}
SENS_KEYS = {"classical", "qois", "method", "max_order", "n_mc", "n_boot", "level", "pce"}
ERROR_KEYS = {"n_test", "qoi_points", "qoi_reps", "snr"}
REFERENCE_KEYS = {"n_points", "n_reps", "n_mc", "qois", "classical", "kinds"}

# smallest budgets the reference command accepts
MIN_REFERENCE = {"n_points": 100, "n_reps": 100, "n_mc": 1000}


class ConfigError(DomainError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping", where)
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}", where)


def _pos_int(v, key, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}", key)
    return v


@dataclass
class DesignSpec:
    N: list
    method: str = "lhs"
    replications: int = 1


@dataclass
class SensSpec:
    classical: bool = True
    qois: list = field(default_factory=list)
    method: str = "pce"
    max_order: int = 1
    n_mc: int = 10**5
    n_boot: int = 0
    level: float = 0.95
    pce: PceSettings = field(default_factory=PceSettings)


@dataclass
class ErrorSpec:
    n_test: int = 10**5
    qoi_points: int = 1000
    qoi_reps: int = 1000
    snr: bool = True


@dataclass
class ReferenceSpec:
    n_points: int = 1000
    n_reps: int = 1000
    n_mc: int = 10**4
    qois: list = field(default_factory=list)
    classical: bool = True
    kinds: tuple = ("first", "total")


@dataclass
class RunConfig:
    seed: int
    simulator: dict | None
    data: Path | None
    inputs: InputModel | None
    design: DesignSpec
    repetitions: int
    fit: GlamFitConfig
    sensitivity: SensSpec
    errors: ErrorSpec
    reference: ReferenceSpec
    raw: dict

    @property
    def hash(self) -> str:
        """Hash of the resolved configuration (seed included, paths as given)."""
        return config_hash(self.raw)

    def provenance(self, **extra) -> dict:
        out = {"config_hash": self.hash, "seed": self.seed}
        out.update(extra)
        return out

    def input_model(self) -> InputModel:
        return self.inputs if self.inputs is not None else self.get_simulator().input_model()

    def get_simulator(self) -> Simulator:
        if self.simulator is None:
            raise ConfigError("this command needs a simulator in the config", "simulator")
        return get_simulator(self.simulator["name"], self.simulator["settings"])


def _parse_simulator(v):
    if v is None:
        return None
    if isinstance(v, str):
        v = {"name": v}
    _check_keys(v, {"name", "settings"}, "simulator")
    name = v.get("name")
    if name not in SIMULATOR_NAMES:
        raise ConfigError(f"simulator must be one of {list(SIMULATOR_NAMES)}", "simulator")
    settings = dict(v.get("settings") or {})
    try:
        get_simulator(name, settings)
    except TypeError as exc:
        raise ConfigError(f"bad simulator settings: {exc}", "simulator.settings") from None
    return {"name": name, "settings": settings}


def _parse_inputs(items):
    if not isinstance(items, list) or not items:
        raise ConfigError("inputs must be a non-empty list of marginals", "inputs")
    names, margs = [], []
    for k, m in enumerate(items):
        if not isinstance(m, dict):
            raise ConfigError(f"inputs[{k}] must be a mapping", "inputs")
        m = dict(m)
        names.append(str(m.pop("name", f"x{k + 1}")))
        margs.append(m)
    try:
        return InputModel.from_dict({"names": names, "marginals": margs})
    except (DomainError, KeyError, TypeError) as exc:
        raise ConfigError(f"inputs: {exc}", "inputs") from None


def _parse_qois(items, key):
    if not isinstance(items, list):
        raise ConfigError(f"{key} must be a list", key)
    out = []
    for t in items:
        try:
            out.append(QoiSpec.parse(t))
        except DomainError as exc:
            raise ConfigError(str(exc), key) from None
    return out


def parse_config(d: dict, base_dir=".", seed: int | None = None) -> RunConfig:
    """Validate a config mapping; ``seed`` overrides the file's seed."""
    _check_keys(d, TOP_KEYS, "config")
    d = dict(d)
    if seed is not None:
        d["seed"] = seed
    if "seed" not in d:
        raise ConfigError("a seed is mandatory (in the config or via --seed)", "seed")
    s = d["seed"]
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)", "seed")

    sim = _parse_simulator(d.get("simulator"))
    data = None
    if d.get("data") is not None:
        data = Path(base_dir) / str(d["data"])
        if not data.is_file():
            raise ConfigError(f"data file not found: {data}", "data")
    if sim is not None and data is not None:
        raise ConfigError("give either a simulator or a data file, not both", "data")
    if sim is None and data is None:
        raise ConfigError("config needs a simulator or a data file", "simulator")

    inputs = None
    if d.get("inputs") is not None:
        if data is None:
            raise ConfigError("inputs are only given with a data file", "inputs")
        inputs = _parse_inputs(d["inputs"])
    elif data is not None:
        raise ConfigError("a data file needs the input marginals under 'inputs'", "inputs")

    dd = d.get("design") or {}
    _check_keys(dd, DESIGN_KEYS, "design")
    Ns = dd.get("N", 1000)
    Ns = Ns if isinstance(Ns, list) else [Ns]
    if not Ns:
        raise ConfigError("design.N must not be empty", "design.N")
    Ns = [_pos_int(n, "design.N", 2) for n in Ns]
    method = dd.get("method", "lhs")
    if method not in ("lhs", "random"):
        raise ConfigError("design.method must be lhs or random", "design.method")
    design = DesignSpec(Ns, method, _pos_int(dd.get("replications", 1), "design.replications"))

    try:
        fit = GlamFitConfig.from_dict(dict(d.get("fit") or {}, seed=int(s) % 2**32))
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"fit: {exc}", "fit") from None

    sd = d.get("sensitivity") or {}
    _check_keys(sd, SENS_KEYS, "sensitivity")
    try:
        pce = PceSettings.from_dict(dict(sd.get("pce") or {}))
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"sensitivity.pce: {exc}", "sensitivity.pce") from None
    sens = SensSpec(
        classical=bool(sd.get("classical", True)),
        qois=_parse_qois(sd.get("qois", []), "sensitivity.qois"),
        method=sd.get("method", "pce"),
        max_order=_pos_int(sd.get("max_order", 1), "sensitivity.max_order"),
        n_mc=_pos_int(sd.get("n_mc", 10**5), "sensitivity.n_mc", 100),
        n_boot=_pos_int(sd.get("n_boot", 0), "sensitivity.n_boot", 0),
        level=float(sd.get("level", 0.95)),
        pce=pce,
    )
    if sens.method not in ("pce", "pickfreeze"):
        raise ConfigError("sensitivity.method must be pce or pickfreeze", "sensitivity.method")
    if not 0 < sens.level < 1:
        raise ConfigError("sensitivity.level must be in (0, 1)", "sensitivity.level")

    ed = d.get("errors") or {}
    _check_keys(ed, ERROR_KEYS, "errors")
    errors = ErrorSpec(
        n_test=_pos_int(ed.get("n_test", 10**5), "errors.n_test", 10),
        qoi_points=_pos_int(ed.get("qoi_points", 1000), "errors.qoi_points", 10),
        qoi_reps=_pos_int(ed.get("qoi_reps", 1000), "errors.qoi_reps", 2),
        snr=bool(ed.get("snr", True)),
    )

    rd = d.get("reference") or {}
    _check_keys(rd, REFERENCE_KEYS, "reference")
    kinds = tuple(rd.get("kinds", ("first", "total")))
    if not kinds or set(kinds) - {"first", "total"}:
        raise ConfigError("reference.kinds must be a subset of [first, total]", "reference.kinds")
    reference = ReferenceSpec(
        n_points=_pos_int(rd.get("n_points", 1000), "reference.n_points"),
        n_reps=_pos_int(rd.get("n_reps", 1000), "reference.n_reps"),
        n_mc=_pos_int(rd.get("n_mc", 10**4), "reference.n_mc"),
        qois=_parse_qois(rd.get("qois", []), "reference.qois"),
        classical=bool(rd.get("classical", True)),
        kinds=kinds,
    )
    repetitions = _pos_int(d.get("repetitions", 1), "repetitions")
    return RunConfig(int(s), sim, data, inputs, design, repetitions, fit, sens, errors, reference, d)


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputFileError(f"config not found: {path}", path) from None
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise InputFileError(f"invalid config: {exc}", path,
                             None if mark is None else mark.line + 1) from None
    if d is None:
        d = {}
    return parse_config(d, path.parent, seed)
