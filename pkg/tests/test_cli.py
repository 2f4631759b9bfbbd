import json
import os
from pathlib import Path
from types import SimpleNamespace

import pytest
from click.testing import CliRunner

from densafe import create_cli
from densafe.artifacts import file_sha256
from densafe.services.sosprog import AdapterResult, SolveStatus

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class DummyAdapter:
    def __init__(self, status):
        self.status = status

    def solve(self, problem, tolerances=None):
        return AdapterResult(self.status, None, [], None, "dummy", 0, 0.0, self.status.value)


@pytest.fixture
def cli(tmp_path):
    return create_cli({
        'OUTPUT_DIR': str(tmp_path / 'runs'),
        'LOG_LEVEL': 'WARNING',
        'WORKERS': 1,
    })


@pytest.fixture
def runner():
    return CliRunner(mix_stderr=False)


@pytest.fixture
def dataset(cli, runner, toy_config, tmp_path):
    path = tmp_path / 'toy.csv'
    r = runner.invoke(cli, ['gen', '--config', str(toy_config), '--out', str(path)])
    assert r.exit_code == 0, r.output
    return path


def use_adapter(monkeypatch, status):
    monkeypatch.setattr('densafe.commands.synth.SolverFactory.get_solver_with_fallback',
                        staticmethod(lambda settings=None: DummyAdapter(status)))


def test_gen_writes_dataset_and_manifest(cli, runner, toy_config, tmp_path):
    r = runner.invoke(cli, ['gen', '--config', str(toy_config)])
    assert r.exit_code == 0, r.stderr
    out = tmp_path / 'runs' / 'toy'
    lines = (out / 'dataset.csv').read_text().splitlines()
    assert lines[0] == 'idx,x1,u,y1'
    assert len(lines) == 13

    manifest = json.loads((out / 'gen_manifest.json').read_text())
    assert manifest['command'] == 'gen'
    assert manifest['seed'] == 3
    assert manifest['dataset_hash'] == file_sha256(out / 'dataset.csv')
    assert 'manifest:' in r.output


def test_gen_is_reproducible(cli, runner, toy_config, tmp_path):
    a, b, c = tmp_path / 'a.csv', tmp_path / 'b.csv', tmp_path / 'c.csv'
    runner.invoke(cli, ['gen', '--config', str(toy_config), '--out', str(a)])
    runner.invoke(cli, ['gen', '--config', str(toy_config), '--out', str(b)])
    runner.invoke(cli, ['gen', '--config', str(toy_config), '--out', str(c), '--seed', '4'])
    assert file_sha256(a) == file_sha256(b)
    assert file_sha256(a) != file_sha256(c)


@pytest.mark.parametrize('old, new', [
    ('samples = 12', 'samples = 0'),
    ('polys = ["1 - x^2"]', 'polys = ["1 - y^2"]'),
    ('epsilon = 0.1', 'epsilon = -0.1'),
    ('schema = 1', 'schema = 2'),
])
def test_bad_config_exits_1(cli, runner, toy_config_text, tmp_path, old, new):
    path = tmp_path / 'bad.toml'
    path.write_text(toy_config_text.replace(old, new), encoding='utf-8')
    r = runner.invoke(cli, ['gen', '--config', str(path)])
    assert r.exit_code == 1
    assert 'Error' in r.stderr


def test_report_demo(cli, runner):
    r = runner.invoke(cli, ['report', '--config', str(CONFIGS / 'quadratic_demo.toml')])
    assert r.exit_code == 0, r.stderr
    assert '969 -> 10' in r.output
    assert 'note:' not in r.output


def test_report_flow_matches_reference(cli, runner):
    r = runner.invoke(cli, ['report', '--config', str(CONFIGS / 'flow.toml')])
    assert r.exit_code == 0, r.stderr
    assert '20475 -> 15' in r.output
    assert 'note:' not in r.output


def test_report_twist_flags_discrepancies(cli, runner):
    r = runner.invoke(cli, ['report', '--config', str(CONFIGS / 'twist.toml')])
    assert r.exit_code == 0, r.stderr
    assert 'note: dim_f: reference 38, computed 57' in r.output
    assert 'note: faces: reference 304, computed 486' in r.output


def test_synth_infeasible_exits_3(cli, runner, toy_config, dataset, tmp_path, monkeypatch):
    use_adapter(monkeypatch, SolveStatus.INFEASIBLE)
    out = tmp_path / 'cert.json'
    r = runner.invoke(cli, ['synth', '--config', str(toy_config), '--dataset', str(dataset), '--out', str(out)])
    assert r.exit_code == 3
    assert 'infeasible at degree' in r.output
    record = json.loads(out.read_text())
    assert record['kind'] == 'infeasible'
    assert record['degrees']['d1'] == 2
    assert (tmp_path / 'synth_manifest.json').exists()


def test_synth_numerical_failure_exits_2(cli, runner, toy_config, dataset, monkeypatch):
    use_adapter(monkeypatch, SolveStatus.NUMERICAL_FAILURE)
    r = runner.invoke(cli, ['synth', '--config', str(toy_config), '--dataset', str(dataset)])
    assert r.exit_code == 2
    assert 'numerical failure' in r.stderr


def test_synth_dump_and_structure(cli, runner, toy_config, dataset, tmp_path, monkeypatch):
    use_adapter(monkeypatch, SolveStatus.INFEASIBLE)
    out = tmp_path / 'dump' / 'cert.json'
    r = runner.invoke(cli, ['synth', '--config', str(toy_config), '--dataset', str(dataset),
                            '--out', str(out), '--dump'])
    assert r.exit_code == 3
    assert 'columns=3 faces=26' in r.output
    assert 'dim_f=1 dim_g=1 dim_w=1' in r.output
    assert 'max_gram=3' in r.output
    conic = (tmp_path / 'dump' / 'conic.txt').read_text()
    assert 'OBJ max' in conic
    polytope = (tmp_path / 'dump' / 'polytope.txt').read_text()
    assert polytope.startswith('# ')


def test_synth_dataset_dimension_mismatch(cli, runner, tmp_path):
    data = tmp_path / 'flow.csv'
    data.write_text('idx,x1,u,y1\n0,0.1,0.0,0.2\n', encoding='utf-8')
    r = runner.invoke(cli, ['synth', '--config', str(CONFIGS / 'flow.toml'), '--dataset', str(data)])
    assert r.exit_code == 1


@pytest.mark.parametrize('flags', [[], ['--open-loop', '--certificate', 'CERT']])
def test_simulate_needs_one_mode(cli, runner, toy_config, tmp_path, flags):
    cert = tmp_path / 'cert.json'
    cert.write_text('{}', encoding='utf-8')
    flags = [str(cert) if f == 'CERT' else f for f in flags]
    r = runner.invoke(cli, ['simulate', '--config', str(toy_config)] + flags)
    assert r.exit_code == 1


def test_simulate_open_loop(cli, runner, toy_config, tmp_path):
    out = tmp_path / 'sim'
    r = runner.invoke(cli, ['simulate', '--config', str(toy_config), '--open-loop', '--out', str(out)])
    assert r.exit_code == 0, r.stderr
    assert 'trajectories=4 unsafe=0' in r.output
    rows = (out / 'trajectories.csv').read_text().splitlines()
    assert rows[0] == 'traj_id,t,x1,u,rho,w1,terminated'
    assert rows[-1].endswith('horizon')
    audit = json.loads((out / 'audit.json').read_text())
    assert audit['mode'] == 'open-loop'
    assert audit['unsafe_count'] == 0
    assert audit['min_rho'] is None
    assert not os.path.exists(out / 'rho_grid.csv')


def test_simulate_rejects_non_certificate(cli, runner, toy_config, tmp_path):
    record = tmp_path / 'infeasible.json'
    record.write_text(json.dumps({'schema': 1, 'kind': 'infeasible'}), encoding='utf-8')
    r = runner.invoke(cli, ['simulate', '--config', str(toy_config), '--certificate', str(record)])
    assert r.exit_code == 1
    assert 'no certificate' in r.stderr


@pytest.mark.slow
def test_end_to_end(cli, runner, toy_config, dataset, tmp_path):
    cert = tmp_path / 'cert.json'
    r = runner.invoke(cli, ['synth', '--config', str(toy_config), '--dataset', str(dataset), '--out', str(cert)])
    assert r.exit_code == 0, r.stderr
    assert 'u = (' in r.output

    r = runner.invoke(cli, ['verify', '--config', str(toy_config), '--dataset', str(dataset),
                            '--certificate', str(cert), '--out', str(tmp_path / 'gates.json')])
    assert r.exit_code == 0, r.stderr
    assert 'Certificate verified' in r.output
    assert json.loads((tmp_path / 'gates.json').read_text())['passed'] is True

    r = runner.invoke(cli, ['simulate', '--config', str(toy_config), '--certificate', str(cert),
                            '--out', str(tmp_path / 'sim')])
    assert r.exit_code == 0, r.stderr
    assert 'unsafe=0' in r.output
    assert (tmp_path / 'sim' / 'rho_grid.csv').exists()

    # shift the density; the stored Gram matrices no longer match it
    data = json.loads(cert.read_text())
    terms = {tuple(mono): coeff for mono, coeff in data['rho']}
    terms[(0,)] = terms.get((0,), 0.0) + 5.0
    data['rho'] = [[list(mono), coeff] for mono, coeff in terms.items()]
    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps(data), encoding='utf-8')
    r = runner.invoke(cli, ['verify', '--config', str(toy_config), '--dataset', str(dataset),
                            '--certificate', str(bad)])
    assert r.exit_code == 4
    assert 'Certificate rejected' in r.stderr


@pytest.fixture(scope='module')
def flow_run(tmp_path_factory):
    root = tmp_path_factory.mktemp('flow')
    cli = create_cli({'OUTPUT_DIR': str(root / 'runs'), 'LOG_LEVEL': 'WARNING', 'WORKERS': 4})
    runner = CliRunner(mix_stderr=False)
    config = CONFIGS / 'flow.toml'
    data, cert = root / 'flow.csv', root / 'flow_cert.json'

    r = runner.invoke(cli, ['gen', '--config', str(config), '--out', str(data)])
    assert r.exit_code == 0, r.stderr
    r = runner.invoke(cli, ['synth', '--config', str(config), '--dataset', str(data), '--out', str(cert)])
    assert r.exit_code == 0, r.stderr
    return SimpleNamespace(cli=cli, runner=runner, root=root, config=config, data=data, cert=cert,
                           synth_output=r.output)


def simulate_audit(run, out, *args):
    r = run.runner.invoke(run.cli, ['simulate', '--config', str(run.config), '--out', str(out)] + list(args))
    assert r.exit_code == 0, r.stderr
    return json.loads((out / 'audit.json').read_text())


@pytest.mark.slow
def test_flow_example(flow_run):
    assert 'columns=22 faces=324' in flow_run.synth_output
    assert 'max_gram=15' in flow_run.synth_output

    r = flow_run.runner.invoke(flow_run.cli, ['verify', '--config', str(flow_run.config), '--dataset',
                                              str(flow_run.data), '--certificate', str(flow_run.cert)])
    assert r.exit_code == 0, r.stderr
    assert 'multiplier LP at x=' in r.output


@pytest.mark.slow
def test_flow_closed_loop_stays_safe(flow_run):
    audit = simulate_audit(flow_run, flow_run.root / 'closed', '--certificate', str(flow_run.cert))
    assert audit['trajectories'] == 30
    assert audit['unsafe_count'] == 0
    for traj in audit['per_trajectory']:
        if traj['started_in_initial_set']:
            assert traj['min_rho'] >= -1e-4
        # rho increases when the state reaches the rho = 0 boundary
        if traj['min_boundary_increment'] is not None:
            assert traj['min_boundary_increment'] > -1e-6


@pytest.mark.slow
def test_flow_open_loop_reaches_unsafe_set(flow_run):
    audit = simulate_audit(flow_run, flow_run.root / 'open', '--open-loop')
    assert audit['unsafe_count'] >= 1


@pytest.mark.slow
def test_flow_noise_free_certificate_is_less_safe(flow_run):
    nominal = flow_run.root / 'nominal_cert.json'
    r = flow_run.runner.invoke(flow_run.cli, ['synth', '--config', str(flow_run.config), '--dataset',
                                              str(flow_run.data), '--out', str(nominal), '--eps-w-override', '0'])
    assert r.exit_code == 0, r.stderr

    failures = {'robust': 0, 'nominal': 0}
    for seed in range(10):
        for label, cert in (('robust', flow_run.cert), ('nominal', nominal)):
            audit = simulate_audit(flow_run, flow_run.root / f'{label}_{seed}', '--certificate', str(cert),
                                   '--seed', str(seed))
            failures[label] += audit['unsafe_count'] + audit['blowup_count']
    assert failures['nominal'] > failures['robust']


@pytest.mark.slow
def test_twist_example(cli, runner, tmp_path):
    config = CONFIGS / 'twist.toml'
    data = tmp_path / 'twist.csv'
    cert = tmp_path / 'twist_cert.json'
    r = runner.invoke(cli, ['gen', '--config', str(config), '--out', str(data)])
    assert r.exit_code == 0, r.stderr

    r = runner.invoke(cli, ['synth', '--config', str(config), '--dataset', str(data), '--out', str(cert)])
    assert r.exit_code == 0, r.stderr
    assert 'columns=63' in r.output

    r = runner.invoke(cli, ['verify', '--config', str(config), '--dataset', str(data), '--certificate', str(cert)])
    assert r.exit_code == 0, r.stderr
