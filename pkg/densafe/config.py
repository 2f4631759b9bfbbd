import dataclasses
import hashlib
import json
import os
import tomllib
from dataclasses import dataclass, field

from dotenv import load_dotenv

load_dotenv()


class Config:
    # Artifact locations (runs are written under the 'instance' folder by default)
    BASE_DIR = os.path.abspath(os.path.dirname(__file__))
    INSTANCE_DIR = os.path.join(os.path.dirname(BASE_DIR), 'instance')
    OUTPUT_DIR = os.getenv('DENSAFE_OUTPUT_DIR', os.path.join(INSTANCE_DIR, 'runs'))

    # Conic backends, tried in this order
    SOLVER = os.getenv('DENSAFE_SOLVER', 'CLARABEL')
    FALLBACK_SOLVER = os.getenv('DENSAFE_FALLBACK_SOLVER', 'SCS')

    LOG_LEVEL = os.getenv('DENSAFE_LOG_LEVEL', 'INFO')

    # Thread pool width for LP oracle sweeps
    WORKERS = int(os.getenv('DENSAFE_WORKERS', '4'))

    # Verification tolerances
    TOL_FEAS = float(os.getenv('DENSAFE_TOL_FEAS', '1e-7'))
    TOL_PSD = float(os.getenv('DENSAFE_TOL_PSD', '1e-8'))
    TOL_RED = float(os.getenv('DENSAFE_TOL_RED', '1e-7'))

    @staticmethod
    def as_dict():
        return {k: getattr(Config, k) for k in dir(Config) if k.isupper()}

    # Ensure directories exist
    @staticmethod
    def init_app(settings):
        os.makedirs(settings['OUTPUT_DIR'], exist_ok=True)


class ConfigError(ValueError):
    def __init__(self, message, field_name=None):
        super().__init__(f"{field_name}: {message}" if field_name else message)
        self.field_name = field_name


SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FPrior:
    degree: int = 3
    zero_at_origin: bool = True


@dataclass(frozen=True)
class GPrior:
    constant: bool = True
    degree: int = 0


@dataclass(frozen=True)
class SetConfig:
    polys: tuple = ()
    mode: str = "intersection"
    box: tuple | None = None


@dataclass(frozen=True)
class Degrees:
    d_rho: int = 4
    d_psi: int = 4
    d1: int = 4
    d2: int = 2


@dataclass(frozen=True)
class SolverSettings:
    tol_feas: float = 1e-7
    tol_psd: float = 1e-8
    max_iter: int | None = None


@dataclass(frozen=True)
class SystemConfig:
    f: tuple = ()
    g: tuple = ()


@dataclass(frozen=True)
class SynthesisSettings:
    unsafe_inflation: float = 0.0
    localize_psi_bound: bool = False
    min_margin: float = 1e-6
    escalate_cap: int | None = None


@dataclass(frozen=True)
class SimulationSettings:
    horizon: float = 10.0
    dt: float = 1e-3
    noise_hold: float = 0.05
    trajectories: int = 30
    blowup_threshold: float = 1e4


@dataclass(frozen=True)
class AuditSettings:
    grid: int = 101
    oracle_points: int = 1000
    set_samples: int = 200
    box: tuple | None = None


@dataclass(frozen=True)
class ProblemConfig:
    name: str
    state_dim: int
    variables: tuple
    f_prior: FPrior
    g_prior: GPrior
    epsilon: float
    epsilon_w: float
    X0: SetConfig
    Xu: SetConfig
    degrees: Degrees
    bounding_box: tuple
    sampling_box: tuple
    samples: int = 80
    input_bound: float = 1.0
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)
    system: SystemConfig = field(default_factory=SystemConfig)
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    audit: AuditSettings = field(default_factory=AuditSettings)
    reference: dict = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def fingerprint(self):
        """sha256 of the canonical JSON form; overrides change it."""
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, seed=None, epsilon_w=None, escalate_cap=None):
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if epsilon_w is not None:
            if epsilon_w < 0:
                raise ConfigError("must be non-negative", "epsilon_w")
            cfg = dataclasses.replace(cfg, epsilon_w=float(epsilon_w))
        if escalate_cap is not None:
            cfg = dataclasses.replace(cfg, synthesis=dataclasses.replace(cfg.synthesis, escalate_cap=int(escalate_cap)))
        return cfg


# --- parsing helpers ---

def _require(data, key, section=None):
    if key not in data:
        raise ConfigError("missing required field", f"{section}.{key}" if section else key)
    return data[key]


def _build(cls, data, section):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("expected a table", section)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", section)
    values = {}
    for key, value in data.items():
        values[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(str(e), section) from e


def _box(value, n, name):
    try:
        box = tuple(tuple(float(v) for v in pair) for pair in value)
    except (TypeError, ValueError) as e:
        raise ConfigError("expected a list of [low, high] pairs", name) from e
    if len(box) != n or any(len(pair) != 2 or pair[0] >= pair[1] for pair in box):
        raise ConfigError(f"expected {n} [low, high] pairs with low < high", name)
    return box


def _validate(cfg):
    n = cfg.state_dim
    if n < 1:
        raise ConfigError("must be at least 1", "state_dim")
    if len(cfg.variables) != n:
        raise ConfigError(f"{len(cfg.variables)} names for state_dim {n}", "variables")
    if cfg.samples < 1:
        raise ConfigError("must be at least 1", "samples")
    if cfg.epsilon < 0:
        raise ConfigError("must be non-negative", "epsilon")
    if cfg.epsilon_w < 0:
        raise ConfigError("must be non-negative", "epsilon_w")
    if cfg.f_prior.degree < 1:
        raise ConfigError("must be at least 1", "f_prior.degree")
    for label, s in (("X0", cfg.X0), ("Xu", cfg.Xu)):
        if s.mode not in ("intersection", "union_product"):
            raise ConfigError(f"unknown mode {s.mode!r}", f"{label}.mode")
    d = cfg.degrees
    if min(d.d_rho, d.d_psi, d.d1, d.d2) < 0:
        raise ConfigError("degrees must be non-negative", "degrees")
    sim = cfg.simulation
    if sim.dt <= 0:
        raise ConfigError("must be positive", "simulation.dt")
    if sim.noise_hold < sim.dt:
        raise ConfigError("must be at least dt", "simulation.noise_hold")
    if sim.trajectories < 1:
        raise ConfigError("must be at least 1", "simulation.trajectories")
    if cfg.synthesis.unsafe_inflation < 0:
        raise ConfigError("must be non-negative", "synthesis.unsafe_inflation")
    if cfg.system.f and (len(cfg.system.f) != n or len(cfg.system.g) != n):
        raise ConfigError(f"need {n} drift and {n} input expressions", "system")
    if cfg.audit.grid < 2:
        raise ConfigError("must be at least 2", "audit.grid")

    # every polynomial string must parse against the declared variables
    from densafe.services.poly import parse_polynomial
    from densafe.services.poly_parser import ParseError

    exprs = [("X0.polys", t) for t in cfg.X0.polys] + [("Xu.polys", t) for t in cfg.Xu.polys]
    exprs += [("system.f", t) for t in cfg.system.f] + [("system.g", t) for t in cfg.system.g]
    for name, text in exprs:
        try:
            parse_polynomial(text, cfg.variables)
        except ParseError as e:
            raise ConfigError(f"{text!r}: {e}", name) from e


def parse_problem_config(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e

    schema = data.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {schema}, expected {SCHEMA_VERSION}", "schema")

    n = int(_require(data, "state_dim"))
    variables = tuple(data.get("variables", [f"x{i + 1}" for i in range(n)]))
    bounding_box = _box(data.get("bounding_box", [[-6.0, 6.0]] * n), n, "bounding_box")
    sampling_box = _box(data.get("sampling_box", bounding_box), n, "sampling_box")
    audit = _build(AuditSettings, data.get("audit"), "audit")
    sets = {}
    for label in ("X0", "Xu"):
        s = _build(SetConfig, _require(data, label), label)
        if s.box is not None:
            s = dataclasses.replace(s, box=_box(s.box, n, f"{label}.box"))
        sets[label] = s
    if audit.box is not None:
        audit = dataclasses.replace(audit, box=_box(audit.box, n, "audit.box"))

    try:
        cfg = ProblemConfig(
            name=str(data.get("name", "problem")),
            state_dim=n,
            variables=variables,
            f_prior=_build(FPrior, data.get("f_prior"), "f_prior"),
            g_prior=_build(GPrior, data.get("g_prior"), "g_prior"),
            epsilon=float(_require(data, "epsilon")),
            epsilon_w=float(_require(data, "epsilon_w")),
            X0=sets["X0"],
            Xu=sets["Xu"],
            degrees=_build(Degrees, data.get("degrees"), "degrees"),
            bounding_box=bounding_box,
            sampling_box=sampling_box,
            samples=int(data.get("samples", 80)),
            input_bound=float(data.get("input_bound", 1.0)),
            seed=int(data.get("seed", 0)),
            solver=_build(SolverSettings, data.get("solver"), "solver"),
            system=_build(SystemConfig, data.get("system"), "system"),
            synthesis=_build(SynthesisSettings, data.get("synthesis"), "synthesis"),
            simulation=_build(SimulationSettings, data.get("simulation"), "simulation"),
            audit=audit,
            reference=dict(data.get("reference", {})),
            schema=schema,
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e
    _validate(cfg)
    return cfg


def load_problem_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    return parse_problem_config(text)
