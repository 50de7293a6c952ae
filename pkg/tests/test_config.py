"""Config file parsing and validation."""
from pathlib import Path

import pytest

from nla.config import (
    EXPERIMENTS, ConfigError, apply_overrides, build_config, load_config, parse_config_text,
)
from nla.grid import Grid
from nla.solver import geometric_record_times


def _write(tmp_path, text, name='run.cfg'):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- parsing --------------------------------------------------------------

def test_parse_skips_comments_and_blank_lines():
    text = """
    # a comment
    experiment = decay   # trailing comment
    grid.n=2048

    p_list = 1, 2, 4
    """
    assert parse_config_text(text) == {'experiment': 'decay', 'grid.n': '2048', 'p_list': '1, 2, 4'}


def test_parse_rejects_duplicates():
    with pytest.raises(ConfigError) as exc:
        parse_config_text('grid.n = 64\ngrid.n = 128\n')
    assert exc.value.key == 'grid.n'
    assert str(exc.value).startswith('grid.n: ')


def test_parse_rejects_lines_without_equals():
    with pytest.raises(ConfigError, match='line 2'):
        parse_config_text('experiment = decay\ngrid.n 64\n')


def test_overrides_replace_values():
    values = apply_overrides({'model.q': '2'}, ['model.q=3', ' seed = 4 '])
    assert values == {'model.q': '3', 'seed': '4'}
    with pytest.raises(ConfigError):
        apply_overrides({}, ['model.q'])


# --- sample configs -------------------------------------------------------

@pytest.mark.parametrize('experiment', EXPERIMENTS)
def test_sample_configs_are_valid(configs_dir, results_dir, experiment):
    config = load_config(configs_dir / f'{experiment}.cfg')
    assert config.experiment == experiment
    assert config.out_dir == results_dir / experiment


def test_decay_sample_config():
    config = load_config(Path(__file__).resolve().parent.parent / 'configs' / 'decay.cfg')
    assert config.grid == Grid(1, 4096, 160.0)
    assert config.model.q == 3.0
    assert config.model.J.family == 'gaussian'
    assert config.model.G.shift == (1.0,)
    assert config.stepper.dt is None
    assert config.stepper.record_times == geometric_record_times(1.0, 200.0)
    assert config.stepper.lp_exponents == (1.0, 2.0)
    assert config.fit_window == (10.0, 200.0)


# --- validation -----------------------------------------------------------

def test_defaults_fill_missing_keys(settings):
    settings.NLA_DEFAULT_TAIL_TOL = 1e-7
    config = build_config({'experiment': 'kernel_limits'})
    assert config.grid == Grid(1, 2048, 10.0)
    assert config.lambda_list == (4.0, 8.0, 16.0)
    assert config.tail_tol == 1e-7
    assert config.stepper.tail_tol == 1e-7


@pytest.mark.parametrize('values,key', [
    ({'grid.n': '100'}, 'grid.n'),
    ({'grid.n': '32'}, 'grid.n'),
    ({'grid.half_width': '-1'}, 'grid.half_width'),
    ({'model.q': '1'}, 'model.q'),
    ({'kernel.J': 'cauchy:1'}, 'kernel.J'),
    ({'kernel.G': 'shifted_bump:1.0'}, 'kernel.G'),
    ({'lambda_list': '4, 2'}, 'lambda_list'),
    ({'lambda_list': '0.5, 2'}, 'lambda_list'),
    ({'R_list': '5, -1'}, 'R_list'),
    ({'p_list': '0.5'}, 'p_list'),
    ({'n_list': 'a, b'}, 'n_list'),
    ({'stepper.dt': 'fast'}, 'stepper.dt'),
    ({'stepper.dt': '-0.1'}, 'stepper.dt'),
    ({'stepper.safety': '2'}, 'stepper.safety'),
    ({'stepper.scheme': 'leapfrog'}, 'stepper.scheme'),
    ({'fit.t_lo': '20', 'fit.t_hi': '10'}, 'fit.t_hi'),
    ({'tail_tol': '0'}, 'tail_tol'),
    ({'initial.kind': 'delta'}, 'initial.kind'),
    ({'warp.factor': '9'}, 'warp.factor'),
])
def test_invalid_values_name_their_key(values, key):
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'decay', **values})
    assert exc.value.key == key
    assert str(exc.value).startswith(f'{key}: ')


def test_unknown_experiment():
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'turbulence'})
    assert exc.value.key == 'experiment'
    with pytest.raises(ConfigError):
        build_config({'grid.n': '64'})


@pytest.mark.parametrize('experiment,dim,q', [
    ('decay', 1, 1.5),
    ('asymptotics', 2, 1.2),
    ('asymptotics', 2, 1.5),
])
def test_asymptotic_experiments_need_q_at_least_critical(experiment, dim, q):
    values = {'experiment': experiment, 'grid.dim': str(dim), 'model.q': str(q),
              'grid.n': '128', 'kernel.G': 'shifted_bump:1.0:1.0'}
    with pytest.raises(ConfigError) as exc:
        build_config(values)
    assert exc.value.key == 'model.q'


def test_profile_residuals_are_one_dimensional():
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'profile_residuals', 'grid.dim': '2', 'grid.n': '128'})
    assert exc.value.key == 'grid.dim'


def test_two_dimensional_shift_is_padded():
    config = build_config({'experiment': 'kernel_limits', 'grid.dim': '2', 'grid.n': '256',
                           'kernel.G': 'shifted_bump:1.0:0.5'})
    assert config.model.G.shift == (0.5, 0.0)


def test_explicit_dt_and_record_times():
    config = build_config({'experiment': 'scaling_identity', 'stepper.dt': '0.01',
                           'stepper.record_times': '0.25, 0.5, 1'})
    assert config.stepper.dt == 0.01
    assert config.stepper.record_times == (0.25, 0.5, 1.0)
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'scaling_identity', 'stepper.record_times': '0.5, 3'})
    assert exc.value.key == 'stepper.record_times'


def test_tail_radii_must_fit_inside_the_monitor():
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'tail_bounds', 'grid.half_width': '60'})
    assert exc.value.key == 'R_list'
    config = build_config({'experiment': 'tail_bounds'})
    assert 2 * max(config.R_list) <= config.grid.half_width / 2


def test_out_dir_must_be_creatable(tmp_path):
    blocker = tmp_path / 'occupied'
    blocker.write_text('')
    with pytest.raises(ConfigError) as exc:
        build_config({'experiment': 'decay', 'out_dir': str(blocker / 'deeper' / 'results')})
    assert exc.value.key == 'out_dir'
    assert 'not a directory' in str(exc.value)


def test_out_dir_override(tmp_path):
    config = build_config({'experiment': 'decay', 'out_dir': str(tmp_path / 'mine')})
    assert config.out_dir == tmp_path / 'mine'


# --- files ----------------------------------------------------------------

def test_command_line_experiment_wins(tmp_path):
    path = _write(tmp_path, 'experiment = decay\n')
    assert load_config(path, experiment='kernel_limits').experiment == 'kernel_limits'
    assert load_config(path).experiment == 'decay'


def test_overrides_are_validated(tmp_path):
    path = _write(tmp_path, 'experiment = decay\n')
    assert load_config(path, ['model.q=4']).model.q == 4.0
    with pytest.raises(ConfigError) as exc:
        load_config(path, ['model.q=0.5'])
    assert exc.value.key == 'model.q'


def test_table_kernel_path_is_relative_to_the_config(tmp_path):
    (tmp_path / 'kernels').mkdir()
    (tmp_path / 'kernels' / 'j.csv').write_text('z,value\n-1,0\n0,1\n1,0\n')
    path = _write(tmp_path, 'experiment = kernel_limits\nkernel.J = table:kernels/j.csv\n')
    assert load_config(path).model.J.family == 'table'


def test_missing_file():
    with pytest.raises(ConfigError, match='cannot read'):
        load_config('/nonexistent/run.cfg')
