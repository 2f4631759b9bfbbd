import click

from densafe.artifacts import read_dataset
from densafe.commands import exit_codes, load_config
from densafe.services import pipeline
from densafe.services.synth import complexity_for_spec, complexity_report


def computed_figures(cfg, dictionary):
    """Structural figures that follow from the config alone (no data needed)."""
    n = cfg.state_dim
    return {
        'columns': dictionary.columns,
        'dim_f': n * dictionary.d_f,
        'dim_g': n * dictionary.d_g,
        'dim_w': n,
        'faces': 2 * n * cfg.samples + 2 * n,
    }


def discrepancy_notes(reference, computed):
    notes = []
    for key in sorted(reference):
        if key not in computed:
            continue
        expected, actual = reference[key], computed[key]
        if expected != actual:
            notes.append(f"{key}: reference {expected}, computed {actual}")
    return notes


@click.command('report')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--dataset', 'dataset_path', type=click.Path(exists=True, dir_okay=False),
              help='With a dataset, also count nonredundant faces and Gram blocks.')
@click.pass_context
@exit_codes
def command(ctx, config_path, dataset_path):
    """Naive-versus-multiplier Gram sizes and a check against the reference figures."""
    cfg = load_config(config_path)
    problem = pipeline.build_problem(cfg)
    dictionary = problem.dictionary
    computed = computed_figures(cfg, dictionary)

    cx = complexity_report(cfg.state_dim, computed['dim_f'], computed['dim_g'], cfg.degrees.d1)
    if dataset_path:
        data = read_dataset(dataset_path, cfg.epsilon)
        _, reduced, kept, summary = pipeline.build_polytope(problem, data, ctx.obj['TOL_RED'])
        cx = complexity_for_spec(pipeline.synthesis_spec(problem, reduced, kept))
        computed.update({
            'faces': summary.faces,
            'nonredundant': summary.nonredundant,
            'gram_blocks': cx.blocks,
            'max_gram': cx.dual_gram,
        })
    else:
        computed['max_gram'] = cx.dual_gram

    click.echo(f"problem: {cfg.name} (n={cfg.state_dim}, d_r={cx.d_r})")
    click.echo(f"{'':<28}{'naive':>12}{'multiplier':>12}")
    click.echo(f"{'indeterminates':<28}{cx.naive_dim:>12}{cfg.state_dim:>12}")
    click.echo(f"{'max Gram side':<28}{cx.naive_gram:>12}{cx.dual_gram:>12}")
    click.echo(cx.line())

    click.echo("")
    click.echo(f"{'figure':<16}{'computed':>10}{'reference':>11}")
    for key in ('columns', 'dim_f', 'dim_g', 'dim_w', 'faces', 'nonredundant', 'gram_blocks', 'max_gram'):
        if key not in computed and key not in cfg.reference:
            continue
        value = computed.get(key, '-')
        ref = cfg.reference.get(key, '-')
        click.echo(f"{key:<16}{value!s:>10}{ref!s:>11}")

    notes = discrepancy_notes(cfg.reference, computed)
    for note in notes:
        click.echo(f"note: {note}")
