import os

import click

from densafe import __version__
from densafe.artifacts import RunManifest, read_certificate, write_grid, write_json, write_trajectories
from densafe.commands import default_path, exit_codes, load_config
from densafe.config import ConfigError
from densafe.services import pipeline
from densafe.services.sim import rho_level_grid, safety_audit, sample_initial_conditions, simulate_batch
from densafe.services.synth import make_controller


@click.command('simulate')
@click.option('--config', 'config_path', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--certificate', 'certificate_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--open-loop', is_flag=True, help='Simulate with u = 0 instead of a certificate.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Directory for trajectories and audit.')
@click.option('--seed', type=int, help='Override the config seed (initial states and noise).')
@click.option('--eps-w-override', 'eps_w', type=float, help='Process noise bound applied online.')
@click.pass_context
@exit_codes
def command(ctx, config_path, certificate_path, open_loop, out_dir, seed, eps_w):
    """Integrate trajectories from the initial set and audit them against the unsafe set."""
    if open_loop == bool(certificate_path):
        raise ConfigError("pass exactly one of --certificate and --open-loop")
    cfg = load_config(config_path, seed=seed, epsilon_w=eps_w)
    problem = pipeline.build_problem(cfg)
    system = pipeline.build_system(problem)
    sim_cfg = pipeline.sim_config(cfg)

    controller = rho = None
    if certificate_path:
        cert = read_certificate(certificate_path)
        if cert.rho.n != cfg.state_dim:
            raise ConfigError(f"certificate is for n={cert.rho.n}, config declares {cfg.state_dim}", "state_dim")
        controller = make_controller(cert, sim_cfg.blowup_threshold)
        rho = cert.rho

    x0s = sample_initial_conditions(problem.X0, sim_cfg.trajectories, sim_cfg.seed)
    trajectories = simulate_batch(system, controller, x0s, sim_cfg, rho)
    audit = safety_audit(trajectories, problem.X0, problem.Xu, rho)

    out_dir = out_dir or default_path(ctx, cfg)
    manifest = RunManifest.start('simulate', cfg, out_dir, __version__)
    if certificate_path:
        manifest.certificate = os.path.basename(certificate_path)
    manifest.add_file(write_trajectories(os.path.join(out_dir, 'trajectories.csv'), trajectories, cfg.variables))
    summary = audit.to_dict()
    summary.update({
        'mode': 'open-loop' if open_loop else 'closed-loop',
        'epsilon_w': sim_cfg.epsilon_w,
        'seed': sim_cfg.seed,
        'horizon': sim_cfg.horizon,
        'dt': sim_cfg.dt,
    })
    manifest.add_file(write_json(os.path.join(out_dir, 'audit.json'), summary))
    if rho is not None:
        grid = rho_level_grid(rho, cfg.bounding_box, cfg.audit.grid)
        manifest.add_file(write_grid(os.path.join(out_dir, 'rho_grid.csv'), grid, cfg.variables))
    manifest.write()

    min_rho = f"{audit.min_rho:.3e}" if audit.min_rho is not None else "n/a"
    click.echo(
        f"trajectories={len(trajectories)} unsafe={audit.unsafe_count} "
        f"blowups={audit.blowup_count} left_box={audit.left_box_count} min_rho={min_rho}"
    )
