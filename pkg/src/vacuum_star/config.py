"""Run configuration loaded from TOML.

Only ``kappa``, ``delta`` and ``lambda1`` are required. A minimal file::

    kappa = 0.5
    delta = 1e-3
    lambda1 = 0.5

    [initial]
    kind = "polynomial"
    theta = [1e-3, -1e-3]     # odd coefficients: 1e-3 z - 1e-3 z**3

Sections: top level holds the numerical parameters, ``[tolerances]`` the
solver tolerances, ``[initial]`` the data source, ``[run]`` cadence and
switches and ``[output]`` the output directory.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .grid import RadialGrid
from .scaling import SimParams, Tolerances

INITIAL_KINDS = ("reference", "polynomial", "file")
E6_SIGNS = ("literal", "derived")


@dataclass(frozen=True)
class InitialData:
    """Initial data source.

    ``polynomial``: ``theta`` and ``velocity`` are coefficients of the odd
    powers z, z**3, z**5, ... for Theta_0 and U_0.
    ``reference``: the reference Eulerian profile, mapped through the gauge.
    ``file``: Eulerian CSV with columns zeta, rho_tilde0, v_tilde0.
    """

    kind: str = "reference"
    theta: tuple = ()
    velocity: tuple = ()
    path: str = ""


@dataclass(frozen=True)
class RunOptions:
    e6_sign: str = "literal"
    classical_limit: bool = False
    filter_on: bool = False
    record_every: int = 10
    checkpoint_every: int = 0
    stop_on_bootstrap: bool = True
    M_star: float = 10.0
    epsilon: float | None = None
    balance: bool = False
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    params: SimParams
    initial: InitialData = field(default_factory=InitialData)
    run: RunOptions = field(default_factory=RunOptions)
    out_dir: str = "out"

    def to_dict(self) -> dict:
        d = {"params": self.params.to_dict(), "initial": asdict(self.initial), "run": asdict(self.run),
             "out_dir": self.out_dir}
        d["initial"]["theta"] = list(self.initial.theta)
        d["initial"]["velocity"] = list(self.initial.velocity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        ini = dict(d.get("initial", {}))
        ini["theta"] = tuple(ini.get("theta", ()))
        ini["velocity"] = tuple(ini.get("velocity", ()))
        cfg = cls(
            params=SimParams.from_dict(d["params"]),
            initial=InitialData(**ini),
            run=RunOptions(**d.get("run", {})),
            out_dir=d.get("out_dir", "out"),
        )
        validate(cfg)
        return cfg

    def with_params(self, **changes) -> "RunConfig":
        return replace(self, params=replace(self.params, **changes))

    def with_run(self, **changes) -> "RunConfig":
        return replace(self, run=replace(self.run, **changes))


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


def _line_of(text: str, key: str) -> str:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(key) and stripped[len(key):].lstrip().startswith("="):
            return f"line {lineno}: "
    return ""


def validate(cfg: RunConfig) -> None:
    problems = []
    ini = cfg.initial
    if ini.kind not in INITIAL_KINDS:
        problems.append(f"initial.kind must be one of {INITIAL_KINDS}, got {ini.kind!r}")
    if ini.kind == "file" and not ini.path:
        problems.append("initial.path is required when initial.kind = 'file'")
    for name in ("theta", "velocity"):
        for c in getattr(ini, name):
            if not isinstance(c, (int, float)) or isinstance(c, bool) or not math.isfinite(c):
                problems.append(f"initial.{name} entries must be finite numbers, got {c!r}")
    i_max = RadialGrid.chain_limit(cfg.params.n_grid)
    if cfg.params.n_diag + 1 > i_max:
        problems.append(f"n_diag={cfg.params.n_diag} needs calD_{cfg.params.n_diag + 1}, but n_grid={cfg.params.n_grid} "
                        f"supports derivative chains up to order {i_max}")
    r = cfg.run
    if r.e6_sign not in E6_SIGNS:
        problems.append(f"run.e6_sign must be one of {E6_SIGNS}, got {r.e6_sign!r}")
    if int(r.record_every) != r.record_every or r.record_every < 1:
        problems.append(f"run.record_every must be a positive integer, got {r.record_every!r}")
    if int(r.checkpoint_every) != r.checkpoint_every or r.checkpoint_every < 0:
        problems.append(f"run.checkpoint_every must be a nonnegative integer, got {r.checkpoint_every!r}")
    if not (r.M_star > 0.0):
        problems.append(f"run.M_star must be > 0, got {r.M_star!r}")
    if r.epsilon is not None and not (r.epsilon > 0.0):
        problems.append(f"run.epsilon must be > 0, got {r.epsilon!r}")
    if problems:
        raise ConfigError("; ".join(problems))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate TOML text; errors name the offending line where possible."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    sections = {"tolerances": Tolerances, "initial": InitialData, "run": RunOptions}
    top_allowed = (_names(SimParams) - {"tolerances"}) | set(sections) | {"output"}
    for key in raw:
        if key not in top_allowed:
            raise ConfigError(f"{source}: {_line_of(text, key)}unknown key {key!r}")
    for name, cls in sections.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"{source}: [{name}] must be a table")
        for key in sec:
            if key not in _names(cls):
                raise ConfigError(f"{source}: {_line_of(text, key)}unknown key {key!r} in [{name}]")
    out = raw.get("output", {})
    if not isinstance(out, dict) or set(out) - {"dir"}:
        raise ConfigError(f"{source}: [output] accepts only 'dir'")

    missing = [k for k in ("kappa", "delta", "lambda1") if k not in raw]
    if missing:
        raise ConfigError(f"{source}: missing required key(s) {', '.join(missing)}")

    sim = {k: v for k, v in raw.items() if k in _names(SimParams)}
    for key, value in sim.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{source}: {_line_of(text, key)}{key} must be a number, got {value!r}")
    for key in ("kappa", "delta", "lambda1", "lambda0", "tau_max", "dt_tau", "weight_scale"):
        if key in sim:
            sim[key] = float(sim[key])
    try:
        params = SimParams(tolerances=Tolerances(**raw.get("tolerances", {})), **sim)
    except ConfigError as exc:
        bad = [k for k in sim if k in str(exc)]
        where = _line_of(text, bad[0]) if bad else ""
        raise ConfigError(f"{source}: {where}{exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    ini = dict(raw.get("initial", {}))
    ini["theta"] = tuple(ini.get("theta", ()))
    ini["velocity"] = tuple(ini.get("velocity", ()))
    cfg = RunConfig(
        params=params,
        initial=InitialData(**ini),
        run=RunOptions(**raw.get("run", {})),
        out_dir=str(out.get("dir", "out")),
    )
    try:
        validate(cfg)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=path)
