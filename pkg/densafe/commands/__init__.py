import functools
import logging
import os

import click

from densafe.artifacts import ArtifactError
from densafe.config import ConfigError, load_problem_config
from densafe.services.consistency import InconsistentDataError, LPFailure
from densafe.services.model import SamplingError, UnsupportedSetError
from densafe.services.poly import StructuralError
from densafe.services.sosprog import SolverFailure
from densafe.services.synth import AssemblyError, CertificateRejected

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFICATION = 4

# Bad input of any kind: config, artifacts, set descriptions, data
_INPUT_ERRORS = (
    ConfigError,
    ArtifactError,
    StructuralError,
    UnsupportedSetError,
    SamplingError,
    InconsistentDataError,
    AssemblyError,
)


def exit_codes(fn):
    """Map domain errors onto the command exit-code contract."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CertificateRejected as e:
            for gate in e.failures:
                click.echo(gate.describe(), err=True)
            raise click.exceptions.Exit(EXIT_VERIFICATION)
        except (SolverFailure, LPFailure) as e:
            click.echo(f"Error: numerical failure: {e}", err=True)
            raise click.exceptions.Exit(EXIT_NUMERICAL)
        except _INPUT_ERRORS as e:
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(EXIT_CONFIG)
    return wrapper


def load_config(config_path, seed=None, epsilon_w=None, escalate_cap=None):
    cfg = load_problem_config(config_path)
    cfg = cfg.with_overrides(seed=seed, epsilon_w=epsilon_w, escalate_cap=escalate_cap)
    logging.info(f"Loaded config {cfg.name} ({cfg.fingerprint[:12]})")
    return cfg


def default_path(ctx, cfg, filename=""):
    """Artifacts land under OUTPUT_DIR/<problem name>/ unless --out says otherwise."""
    return os.path.join(ctx.obj["OUTPUT_DIR"], cfg.name, filename)
