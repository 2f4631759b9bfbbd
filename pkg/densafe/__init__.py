import logging
import sys

PYTHON_REQUIRES = (3, 11)

if sys.version_info < PYTHON_REQUIRES:
    raise RuntimeError(f"densafe needs Python 3.11 or newer, found {sys.version.split()[0]}")

import click  # noqa: E402

from densafe.config import Config  # noqa: E402

__version__ = "0.1.0"


def create_cli(test_config=None):
    # Create and configure the command group
    if test_config is None:
        # Load the environment-driven config when not testing
        settings = Config.as_dict()
    else:
        # Load the test config if passed in, on top of the defaults
        settings = {**Config.as_dict(), **test_config}

    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(settings['LOG_LEVEL'])

    # Initialize Config (creates the output folder)
    Config.init_app(settings)

    @click.group()
    @click.version_option(__version__, prog_name="densafe")
    @click.pass_context
    def cli(ctx):
        """Data-driven robustly safe controller synthesis."""
        ctx.ensure_object(dict)
        ctx.obj.update(settings)

    # Register Commands
    from .commands import gen, report, simulate, synth, verify
    cli.add_command(gen.command)
    cli.add_command(synth.command)
    cli.add_command(simulate.command)
    cli.add_command(verify.command)
    cli.add_command(report.command)

    return cli
