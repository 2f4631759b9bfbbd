import os

import click

from densafe import __version__
from densafe.artifacts import RunManifest, file_sha256, write_dataset
from densafe.commands import default_path, exit_codes, load_config
from densafe.services import pipeline


@click.command('gen')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Problem config (TOML).')
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Dataset CSV to write.')
@click.option('--seed', type=int, help='Override the config seed.')
@click.pass_context
@exit_codes
def command(ctx, config_path, out_path, seed):
    """Sample a noisy dataset from the configured ground-truth system."""
    cfg = load_config(config_path, seed=seed)
    problem = pipeline.build_problem(cfg)
    data = pipeline.generate(problem)

    out_path = out_path or default_path(ctx, cfg, 'dataset.csv')
    write_dataset(out_path, data)

    manifest = RunManifest.start('gen', cfg, os.path.dirname(os.path.abspath(out_path)), __version__)
    manifest.add_file(out_path)
    manifest.dataset_hash = file_sha256(out_path)
    manifest.write()
    click.echo(f"Wrote {data.T} samples to {out_path}")
