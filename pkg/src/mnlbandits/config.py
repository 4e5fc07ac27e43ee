"""INI experiment configs with field-level validation and a canonical serialized form.

A config has three flat sections::

    [experiment]
    algorithm = rsmnl          ; bmnl | rsmnl | baseline
    T = 1000, 2500, 4500
    n_seeds = 10
    master_seed = 0
    out = runs/exp2

    [environment]
    kind = stochastic-fixed-pool
    d = 3
    K = 3
    n_arms = 10
    S = 2
    R = 2
    seed = 0

    [algorithm]
    preset = experiment        ; experiment | theory: defaults for keys not given
    c_gamma = 0.01
    lam = 1.0                  ; algorithm | theory | rs | default | number
    kappa = auto               ; auto | number >= 1
    M = auto

Sweeps add a ``[grid]`` section whose keys name a field (``c_gamma`` or
``algorithm.c_gamma``) and whose values are comma-separated axis values.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import itertools
from dataclasses import asdict, dataclass, field, fields, replace

from .core import ContractError
from .harness.environments import KINDS, EnvironmentSpec
from .harness.experiments import ALGORITHMS, experiment_preset
from .policies import RESCALE_MODES, AlgorithmConfig

PRESETS = ("experiment", "theory")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    algorithm: str
    T: list
    environment: EnvironmentSpec
    algo: AlgorithmConfig
    n_seeds: int = 10
    master_seed: int = 0
    out: str = "runs/experiment"
    preset: str = "theory"
    grid: dict = field(default_factory=dict)


_ENV_FIELDS = dict(kind=str, d=int, K=int, n_arms=int, S=float, R=float, seed=int)
_ENV_REQUIRED = ("d", "K", "n_arms", "S", "R")
_ALGO_FIELDS = dict(lam=str, delta=float, C=float, c_gamma=float, kappa=str, kappa_samples=int, M=str,
                    eps_design=float, rescale_mode=str, mle_tol=float, mle_max_iters=int, preset=str)
_EXP_FIELDS = dict(algorithm=str, T=str, n_seeds=int, master_seed=int, out=str)
_SECTIONS = dict(experiment=_EXP_FIELDS, environment=_ENV_FIELDS, algorithm=_ALGO_FIELDS)


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    p.optionxform = str
    return p


def _convert(name, raw, kind):
    try:
        return kind(raw)
    except ValueError as err:
        raise ConfigError(name, f"cannot parse {raw!r} as {kind.__name__}") from err


def _int_list(name, raw) -> list:
    vals = [v.strip() for v in str(raw).split(",") if v.strip()]
    if not vals:
        raise ConfigError(name, "grid is empty")
    out = [_convert(name, v, int) for v in vals]
    if any(v < 2 for v in out):
        raise ConfigError(name, "horizons must be >= 2")
    return out


def _lam(raw):
    try:
        return float(raw)
    except ValueError:
        if raw not in ("default", "algorithm", "theory", "rs"):
            raise ConfigError("algorithm.lam", f"unknown preset {raw!r}")
        return raw


def parse_sections(sections: dict) -> ExperimentConfig:
    """Build and validate a config from ``{section: {key: raw string}}``."""
    for sec, keys in sections.items():
        if sec in ("derived", "status", "DEFAULT"):
            continue
        if sec == "grid":
            continue
        if sec not in _SECTIONS:
            raise ConfigError(sec, "unknown section")
        for k in keys:
            if k not in _SECTIONS[sec]:
                raise ConfigError(f"{sec}.{k}", "unknown field")
    exp = sections.get("experiment", {})
    env = sections.get("environment", {})
    alg = sections.get("algorithm", {})
    for req in ("algorithm", "T"):
        if req not in exp:
            raise ConfigError(f"experiment.{req}", "missing required field")
    for req in _ENV_REQUIRED:
        if req not in env:
            raise ConfigError(f"environment.{req}", "missing required field")

    algorithm = exp["algorithm"].strip()
    if algorithm not in ALGORITHMS:
        raise ConfigError("experiment.algorithm", f"must be one of {ALGORITHMS}")
    env_kw = {k: _convert(f"environment.{k}", env[k], t) for k, t in _ENV_FIELDS.items() if k in env}
    spec = EnvironmentSpec(**env_kw)
    if spec.kind not in KINDS:
        raise ConfigError("environment.kind", f"must be one of {KINDS}")
    try:
        spec.validate()
    except ContractError as err:
        raise ConfigError("environment", str(err)) from err
    if algorithm == "bmnl" and not spec.kind.startswith("stochastic"):
        raise ConfigError("environment.kind", "bmnl requires a stochastic environment")

    preset = alg.get("preset", "theory").strip()
    if preset not in PRESETS:
        raise ConfigError("algorithm.preset", f"must be one of {PRESETS}")
    base = experiment_preset(algorithm) if preset == "experiment" else AlgorithmConfig()
    kw = {}
    for k, t in _ALGO_FIELDS.items():
        if k not in alg or k == "preset":
            continue
        raw = alg[k].strip()
        if k == "lam":
            kw[k] = _lam(raw)
        elif k == "kappa":
            kw[k] = None if raw == "auto" else _convert("algorithm.kappa", raw, float)
        elif k == "M":
            kw[k] = None if raw == "auto" else _convert("algorithm.M", raw, int)
        else:
            kw[k] = _convert(f"algorithm.{k}", raw, t)
    algo = replace(base, **kw)
    if algo.rescale_mode not in RESCALE_MODES:
        raise ConfigError("algorithm.rescale_mode", f"must be one of {RESCALE_MODES}")
    try:
        algo.validate()
    except ContractError as err:
        raise ConfigError("algorithm", str(err)) from err

    n_seeds = _convert("experiment.n_seeds", exp.get("n_seeds", "10"), int)
    if n_seeds < 1:
        raise ConfigError("experiment.n_seeds", "must be >= 1")
    grid = {}
    for k, raw in sections.get("grid", {}).items():
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid.{k}", "empty grid axis")
        grid[k] = vals
    return ExperimentConfig(algorithm, _int_list("experiment.T", exp["T"]), spec, algo, n_seeds,
                            _convert("experiment.master_seed", exp.get("master_seed", "0"), int),
                            exp.get("out", "runs/experiment").strip(), preset, grid)


def load_config(path) -> ExperimentConfig:
    p = _parser()
    try:
        with open(path) as fh:
            p.read_file(fh)
    except OSError as err:
        raise ConfigError("config", f"cannot read {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError("config", str(err)) from err
    return parse_sections({s: dict(p[s]) for s in p.sections()})


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def resolved_sections(cfg: ExperimentConfig) -> dict:
    """Every field spelled out, so the text alone reproduces the run."""
    env = cfg.environment
    algo = asdict(cfg.algo)
    algo.pop("record_hessians")
    algo.pop("switch_threshold")
    return dict(
        experiment=dict(algorithm=cfg.algorithm, T=", ".join(map(str, cfg.T)), n_seeds=cfg.n_seeds,
                        master_seed=cfg.master_seed),
        environment={f.name: getattr(env, f.name) for f in fields(env) if f.name in _ENV_FIELDS},
        algorithm=dict(preset=cfg.preset, **algo),
    )


def to_ini(sections: dict) -> str:
    p = _parser()
    for sec, kv in sections.items():
        p[sec] = {k: _fmt(v) for k, v in kv.items()}
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(to_ini(resolved_sections(cfg)).encode()).hexdigest()[:16]


def grid_cells(cfg: ExperimentConfig, sections: dict) -> list:
    """``(label, sections)`` for each grid cell, in cross-product order."""
    if not cfg.grid:
        raise ConfigError("grid", "sweep needs a [grid] section with at least one axis")
    axes = []
    for key in cfg.grid:
        if "." in key:
            sec, name = key.split(".", 1)
        else:
            owners = [s for s, f in _SECTIONS.items() if key in f]
            if len(owners) != 1:
                raise ConfigError(f"grid.{key}", "unknown or ambiguous field")
            sec, name = owners[0], key
        if sec not in _SECTIONS or name not in _SECTIONS[sec]:
            raise ConfigError(f"grid.{key}", "unknown field")
        axes.append((sec, name))
    cells = []
    for combo in itertools.product(*cfg.grid.values()):
        secs = {s: dict(kv) for s, kv in sections.items() if s != "grid"}
        parts = []
        for (sec, name), val in zip(axes, combo):
            secs.setdefault(sec, {})[name] = val
            parts.append(f"{name}-{val}")
        cells.append(("_".join(parts), secs))
    return cells


def read_sections(path) -> dict:
    p = _parser()
    with open(path) as fh:
        p.read_file(fh)
    return {s: dict(p[s]) for s in p.sections()}

