import click

from densafe.artifacts import read_certificate, read_dataset, write_json
from densafe.commands import EXIT_VERIFICATION, exit_codes, load_config
from densafe.services import pipeline
from densafe.services.poly import StructuralError
from densafe.services.sosprog import verify_certificate
from densafe.services.synth import (
    AssemblyError,
    GateResult,
    assemble_algorithm1,
    gates_from_offenders,
    replay_report,
    verify_theorem_conditions,
)


def replay_gates(spec, cert, tol_feas, tol_psd):
    """Coefficient-level gates: rebuild the program and check the stored numbers against it."""
    try:
        a1 = assemble_algorithm1(spec)
        report = replay_report(a1, cert)
    except (AssemblyError, StructuralError) as e:
        return [GateResult("A.1", False, None, None, f"certificate does not fit this polytope: {e}")], None
    summary = verify_certificate(a1.program, report, tol_feas, tol_psd)
    return gates_from_offenders(summary), summary


@click.command('verify')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--dataset', 'dataset_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--certificate', 'certificate_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--out', 'out_path', type=click.Path(dir_okay=False), help='Write the gate report as JSON.')
@click.pass_context
@exit_codes
def command(ctx, config_path, dataset_path, certificate_path, out_path):
    """Re-check a certificate from files alone: sosprog identities, theorem gates, LP oracle."""
    settings = ctx.obj
    cfg = load_config(config_path)
    problem = pipeline.build_problem(cfg)
    data = read_dataset(dataset_path, cfg.epsilon)
    cert = read_certificate(certificate_path)

    try:
        spec = pipeline.replay_spec(
            problem, data, cert.kept_rows, cert.degrees, cert.unsafe_inflation, cert.localize_psi_bound
        )
    except AssemblyError as e:
        click.echo(GateResult("A.1", False, None, None, str(e)).describe(), err=True)
        ctx.exit(EXIT_VERIFICATION)
    tol = pipeline.tolerances(cfg)
    failures, summary = replay_gates(spec, cert, tol.tol_feas, tol.tol_psd)

    grid, oracle = pipeline.audit_inputs(cfg, spec)
    audit = verify_theorem_conditions(cert, spec, grid, oracle, settings['WORKERS'])
    failures += audit.failures

    if out_path:
        write_json(out_path, {
            'passed': not failures,
            'sosprog': summary.to_dict() if summary is not None else None,
            'audit': audit.to_dict(),
            'failures': [g.to_dict() for g in failures],
        })

    for gate in audit.gates.values():
        if gate.passed:
            click.echo(gate.describe())
    if audit.lp_multiplier is not None:
        m = audit.lp_multiplier
        click.echo(f"multiplier LP at x={m['x']}: y^T e = {m['lp_value']} (certified {m['certified_value']:.6g}, bound {m['bound']:.6g})")
    if failures:
        for gate in failures:
            click.echo(gate.describe(), err=True)
        click.echo(f"Certificate rejected: {len(failures)} gate(s) failed", err=True)
        ctx.exit(EXIT_VERIFICATION)
    click.echo("Certificate verified")
