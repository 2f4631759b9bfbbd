import os
import time

import click

from densafe import __version__
from densafe.artifacts import (
    RunManifest,
    file_sha256,
    read_dataset,
    write_certificate,
    write_infeasible,
    write_polytope,
    write_text,
)
from densafe.commands import EXIT_INFEASIBLE, default_path, exit_codes, load_config
from densafe.services import pipeline
from densafe.services.solver_factory import SolverFactory
from densafe.services.sosprog import compile
from densafe.services.synth import InfeasibleResult, assemble_algorithm1, run_synthesis


@click.command('synth')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--dataset', 'dataset_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Certificate JSON to write.')
@click.option('--seed', type=int, help='Override the config seed (audit sampling).')
@click.option('--eps-w-override', 'eps_w', type=float, help='Process noise bound to synthesize against.')
@click.option('--escalate-degrees', 'escalate_cap', type=int,
              help='On infeasibility raise d1, d2 by one until d1 reaches this cap.')
@click.option('--dump', is_flag=True, help='Also write the polytope and the compiled conic problem.')
@click.pass_context
@exit_codes
def command(ctx, config_path, dataset_path, out_path, seed, eps_w, escalate_cap, dump):
    """Synthesize a density certificate from a dataset and write it."""
    settings = ctx.obj
    cfg = load_config(config_path, seed=seed, epsilon_w=eps_w, escalate_cap=escalate_cap)
    problem = pipeline.build_problem(cfg)
    data = read_dataset(dataset_path, cfg.epsilon)

    P1, reduced, kept, summary = pipeline.build_polytope(problem, data, settings['TOL_RED'])
    click.echo(summary.line())
    click.echo(f"dim_f={summary.dim_f} dim_g={summary.dim_g} dim_w={summary.dim_w}")

    spec = pipeline.synthesis_spec(problem, reduced, kept)
    a1 = assemble_algorithm1(spec)
    structure = a1.structure()
    click.echo(f"gram_blocks={structure['gram_blocks']} max_gram={structure['max_gram']}")

    out_path = out_path or default_path(ctx, cfg, 'certificate.json')
    out_dir = os.path.dirname(os.path.abspath(out_path))
    manifest = RunManifest.start('synth', cfg, out_dir, __version__)
    manifest.dataset_hash = file_sha256(dataset_path)
    if dump:
        manifest.add_file(write_polytope(os.path.join(out_dir, 'polytope.txt'), reduced))
        manifest.add_file(write_text(os.path.join(out_dir, 'conic.txt'), compile(a1.program).dump()))

    grid, oracle = pipeline.audit_inputs(cfg, spec)
    adapter = SolverFactory.get_solver_with_fallback(settings)
    start = time.perf_counter()
    result = run_synthesis(
        spec,
        adapter,
        pipeline.tolerances(cfg),
        cfg.synthesis.escalate_cap,
        grid,
        oracle,
        settings['WORKERS'],
    )
    elapsed = time.perf_counter() - start
    manifest.timings['synthesis_seconds'] = elapsed
    provenance = {
        'config': cfg.fingerprint,
        'dataset': manifest.dataset_hash,
        'name': cfg.name,
        'epsilon': cfg.epsilon,
        'epsilon_w': cfg.epsilon_w,
        'seed': cfg.seed,
    }

    if isinstance(result, InfeasibleResult):
        write_infeasible(out_path, result, provenance)
        manifest.add_file(out_path)
        manifest.write()
        click.echo(f"{result.message} (solver time {elapsed:.2f}s)")
        ctx.exit(EXIT_INFEASIBLE)

    result.provenance = provenance
    write_certificate(out_path, result, cfg.variables)
    manifest.certificate = os.path.basename(out_path)
    manifest.add_file(out_path)
    manifest.write()
    stats = result.solver_stats
    click.echo(f"solver={stats.get('solver')} time={elapsed:.2f}s c1={result.c1:.3e} c2={result.c2:.3e}")
    click.echo(f"u = ({result.psi.to_string(cfg.variables)}) / ({result.rho.to_string(cfg.variables)})")
    click.echo(f"Wrote certificate to {out_path}")
