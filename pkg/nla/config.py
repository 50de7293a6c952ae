"""
Experiment configuration files.

A config is flat UTF-8 text of `key = value` lines with `#` comments:

    experiment = decay
    grid.n = 4096
    model.q = 3
    kernel.G = shifted_bump:1.0:1.0
    p_list = 1, 2, 4

Values are checked by ExperimentConfigForm, a Django form whose field names
are the dotted keys, so every error can be reported against the key that
caused it.
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from django import forms
from django.conf import settings
from django.core.exceptions import ValidationError

from .grid import Grid
from .kernels import KernelSpec, parse_kernel_spec
from .solver import ModelParams, StepperConfig, geometric_record_times

logger = logging.getLogger(__name__)

EXPERIMENTS = (
    'decay', 'asymptotics', 'scaling_identity', 'kernel_limits',
    'energy_bounds', 'tail_bounds', 'compactness_functionals', 'profile_residuals',
)

INITIAL_KINDS = ('gaussian', 'two_bump')

DEFAULTS = {
    'grid.dim': '1',
    'grid.n': '1024',
    'grid.half_width': '20',
    'model.q': '2',
    'model.lambda': '1',
    'kernel.J': 'gaussian:1.0',
    'kernel.G': 'shifted_bump:1.0:1.0',
    'kernel.rho': 'bump:1.0',
    'initial.kind': 'gaussian',
    'initial.mass': '1',
    'initial.width': '1',
    'stepper.scheme': 'rk4',
    'stepper.dt': 'auto',
    'stepper.safety': '0.5',
    'stepper.t_end': '1',
    'stepper.t_min': '1',
    'stepper.record_times': '',
    'lambda_list': '1, 2, 4, 8',
    'R_list': '5, 10, 20',
    'p_list': '1, 2',
    't_list': '1, 4, 16',
    'n_list': '4, 8, 16, 32',
    'out_dir': '',
    'seed': '0',
    'tail_tol': '',
    'fit.t_lo': '10',
    'fit.t_hi': '200',
}

# Desk-scale sizes per experiment; the tail monitor needs the wide box for long runs
EXPERIMENT_DEFAULTS = {
    'decay': {'grid.n': '4096', 'grid.half_width': '160', 'model.q': '3',
              'stepper.t_end': '200', 'p_list': '1, 2'},
    'asymptotics': {'grid.n': '4096', 'grid.half_width': '160', 'model.q': '2',
                    'stepper.t_end': '200', 'p_list': '1, 2'},
    'scaling_identity': {'grid.n': '2048', 'grid.half_width': '40', 'model.lambda': '2',
                         'stepper.t_end': '1'},
    'kernel_limits': {'grid.n': '2048', 'grid.half_width': '10', 'lambda_list': '4, 8, 16'},
    'energy_bounds': {'grid.n': '8192', 'grid.half_width': '40', 'initial.width': '0.25',
                      'fit.t_lo': '1', 'fit.t_hi': '2', 'stepper.t_end': '2'},
    'tail_bounds': {'grid.n': '4096', 'grid.half_width': '100', 'lambda_list': '1, 2, 4',
                    'stepper.t_end': '16'},
    'compactness_functionals': {'grid.n': '4096', 'grid.half_width': '10', 'p_list': '2'},
    'profile_residuals': {'grid.n': '1024', 'grid.half_width': '20'},
}


class ConfigError(Exception):
    """Raised for unreadable or invalid configuration; the message starts with the key."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def parse_config_text(text: str) -> dict:
    """`key = value` lines into a dict of strings; `#` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key in values:
            raise ConfigError(f"given twice (line {lineno})", key)
        values[key] = value.strip()
    return values


def apply_overrides(values: dict, overrides) -> dict:
    values = dict(values)
    for item in overrides or ():
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


class FloatListField(forms.Field):
    """Comma-separated reals."""

    def to_python(self, value):
        if value in self.empty_values:
            return ()
        try:
            return tuple(float(v) for v in str(value).split(',') if v.strip())
        except ValueError:
            raise ValidationError(f"expected comma-separated numbers, got {value!r}")


class PositiveDtField(forms.Field):
    """'auto' or a positive real."""

    def to_python(self, value):
        if value in self.empty_values or str(value).strip().lower() == 'auto':
            return None
        try:
            dt = float(value)
        except ValueError:
            raise ValidationError(f"expected 'auto' or a number, got {value!r}")
        if not dt > 0:
            raise ValidationError("dt must be positive")
        return dt


class ExperimentConfigForm(forms.Form):
    """Validates a parsed config dict; field names are the dotted config keys."""

    def __init__(self, data, base_dir=None):
        super().__init__(data)
        self.base_dir = base_dir
        f = self.fields
        f['experiment'] = forms.ChoiceField(choices=[(e, e) for e in EXPERIMENTS])
        f['grid.dim'] = forms.TypedChoiceField(choices=[('1', '1'), ('2', '2')], coerce=int)
        f['grid.n'] = forms.IntegerField(min_value=64)
        f['grid.half_width'] = forms.FloatField()
        f['model.q'] = forms.FloatField()
        f['model.lambda'] = forms.FloatField(min_value=1)
        for name in ('kernel.J', 'kernel.G', 'kernel.rho'):
            f[name] = forms.CharField()
        f['initial.kind'] = forms.ChoiceField(choices=[(k, k) for k in INITIAL_KINDS])
        f['initial.mass'] = forms.FloatField()
        f['initial.width'] = forms.FloatField()
        f['stepper.scheme'] = forms.ChoiceField(choices=[('euler', 'euler'), ('rk4', 'rk4')])
        f['stepper.dt'] = PositiveDtField(required=False)
        f['stepper.safety'] = forms.FloatField()
        f['stepper.t_end'] = forms.FloatField(min_value=0)
        f['stepper.t_min'] = forms.FloatField()
        f['stepper.record_times'] = FloatListField(required=False)
        for name in ('lambda_list', 'R_list', 'p_list', 't_list', 'n_list'):
            f[name] = FloatListField(required=False)
        f['out_dir'] = forms.CharField(required=False)
        f['seed'] = forms.IntegerField(min_value=0)
        f['tail_tol'] = forms.FloatField(required=False)
        f['fit.t_lo'] = forms.FloatField()
        f['fit.t_hi'] = forms.FloatField()

    def _positive(self, cleaned, key):
        value = cleaned.get(key)
        if value is not None and not value > 0:
            self.add_error(key, "must be positive")

    def clean(self):
        cleaned = super().clean()

        n = cleaned.get('grid.n')
        if n is not None and n & (n - 1):
            self.add_error('grid.n', f"must be a power of two, got {n}")
        for key in ('grid.half_width', 'initial.mass', 'initial.width', 'stepper.t_min', 'fit.t_lo'):
            self._positive(cleaned, key)
        safety = cleaned.get('stepper.safety')
        if safety is not None and not 0 < safety <= 1:
            self.add_error('stepper.safety', "must lie in (0, 1]")
        q = cleaned.get('model.q')
        if q is not None and not q > 1:
            self.add_error('model.q', "must be > 1")

        dim = cleaned.get('grid.dim')
        if dim is not None:
            for key in ('kernel.J', 'kernel.G', 'kernel.rho'):
                if cleaned.get(key):
                    try:
                        cleaned[key] = parse_kernel_spec(cleaned[key], dim, self.base_dir)
                    except (ValueError, OSError) as e:
                        self.add_error(key, str(e))

        for key in ('lambda_list', 'n_list'):
            values = cleaned.get(key) or ()
            if any(b <= a for a, b in zip(values, values[1:])):
                self.add_error(key, "must be sorted ascending")
            if any(v < 1 for v in values):
                self.add_error(key, "entries must be >= 1")
        for key in ('R_list', 't_list'):
            if any(v <= 0 for v in cleaned.get(key) or ()):
                self.add_error(key, "entries must be positive")
        if any(p < 1 for p in cleaned.get('p_list') or ()):
            self.add_error('p_list', "entries must be >= 1")

        t_lo, t_hi = cleaned.get('fit.t_lo'), cleaned.get('fit.t_hi')
        if t_lo is not None and t_hi is not None and not t_hi > t_lo:
            self.add_error('fit.t_hi', "must exceed fit.t_lo")

        tail_tol = cleaned.get('tail_tol')
        if tail_tol is not None and not tail_tol > 0:
            self.add_error('tail_tol', "must be positive")

        experiment = cleaned.get('experiment')
        if experiment in ('decay', 'asymptotics') and q is not None and dim is not None:
            critical = 1 + 1 / dim
            if q < critical - 1e-12:
                self.add_error('model.q', f"must be >= 1 + 1/d = {critical:g} for {experiment}")
            elif experiment == 'asymptotics' and abs(q - critical) < 1e-12 and dim != 1:
                self.add_error('model.q', "the critical-case profile is available for d = 1 only")
        if experiment == 'profile_residuals' and dim not in (None, 1):
            self.add_error('grid.dim', "profile residuals are computed for d = 1")
        half_width = cleaned.get('grid.half_width')
        R_list = cleaned.get('R_list') or ()
        if experiment == 'tail_bounds' and R_list and half_width and 4 * max(R_list) > half_width:
            self.add_error('R_list', f"2R must stay within the tail monitor radius L/2 = {half_width / 2:g}")
        return cleaned


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    grid: Grid
    model: ModelParams
    rho: KernelSpec
    stepper: StepperConfig
    initial_kind: str = 'gaussian'
    initial_mass: float = 1.0
    initial_width: float = 1.0
    t_min: float = 1.0
    lambda_list: tuple = ()
    R_list: tuple = ()
    p_list: tuple = ()
    t_list: tuple = ()
    n_list: tuple = ()
    out_dir: Path = Path('results')
    seed: int = 0
    tail_tol: float = 1e-6
    fit_window: tuple = (10.0, 200.0)
    values: dict = field(default_factory=dict, compare=False)


def _first_error(form) -> ConfigError:
    key, errors = next(iter(form.errors.as_data().items()))
    key = None if key == '__all__' else key
    return ConfigError(' '.join(errors[0].messages), key)


def _check_writable(out_dir: Path):
    """The nearest existing ancestor of out_dir must be a writable directory."""
    existing = out_dir.absolute()
    while not existing.exists() and existing != existing.parent:
        existing = existing.parent
    if not existing.is_dir():
        raise ConfigError(f"{existing} is not a directory", 'out_dir')
    if not os.access(existing, os.W_OK | os.X_OK):
        raise ConfigError(f"{existing} is not writable", 'out_dir')


def build_config(values: dict, base_dir=None) -> ExperimentConfig:
    """Validate a dict of raw strings against the per-experiment defaults."""
    experiment = values.get('experiment')
    if experiment is None:
        raise ConfigError("required (name the experiment in the file or on the command line)", 'experiment')
    unknown = sorted(set(values) - set(DEFAULTS) - {'experiment'})
    if unknown:
        raise ConfigError("unknown key", unknown[0])

    data = {**DEFAULTS, **EXPERIMENT_DEFAULTS.get(experiment, {}), **values}
    form = ExperimentConfigForm(data, base_dir=base_dir)
    if not form.is_valid():
        raise _first_error(form)
    c = form.cleaned_data

    try:
        grid = Grid(c['grid.dim'], c['grid.n'], c['grid.half_width'])
        model = ModelParams(c['model.q'], c['model.lambda'], c['kernel.J'], c['kernel.G'], c['grid.dim'])
    except ValueError as e:
        raise ConfigError(str(e), 'grid')

    tail_tol = c['tail_tol'] if c['tail_tol'] is not None else getattr(settings, 'NLA_DEFAULT_TAIL_TOL', 1e-6)
    t_end = c['stepper.t_end']
    record_times = c['stepper.record_times']
    if not record_times:
        record_times = geometric_record_times(c['stepper.t_min'], t_end) if t_end >= c['stepper.t_min'] else (t_end,)
    try:
        stepper = StepperConfig(
            scheme=c['stepper.scheme'], dt=c['stepper.dt'], safety=c['stepper.safety'],
            t_end=t_end, record_times=record_times, tail_tol=tail_tol,
            lp_exponents=c['p_list'],
        )
    except ValueError as e:
        raise ConfigError(str(e), 'stepper.record_times')

    out_dir = Path(c['out_dir']) if c['out_dir'] else \
        Path(getattr(settings, 'NLA_RESULTS_DIR', 'results')) / experiment
    _check_writable(out_dir)
    return ExperimentConfig(
        experiment=experiment, grid=grid, model=model, rho=c['kernel.rho'], stepper=stepper,
        initial_kind=c['initial.kind'], initial_mass=c['initial.mass'],
        initial_width=c['initial.width'], t_min=c['stepper.t_min'],
        lambda_list=c['lambda_list'], R_list=c['R_list'], p_list=c['p_list'],
        t_list=c['t_list'], n_list=c['n_list'], out_dir=out_dir, seed=c['seed'],
        tail_tol=tail_tol, fit_window=(c['fit.t_lo'], c['fit.t_hi']), values=data,
    )


def load_config(path, overrides=(), experiment=None) -> ExperimentConfig:
    """Read, override and validate a config file.

    An experiment named by the caller wins over the file's `experiment` key.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}")
    values = apply_overrides(parse_config_text(text), overrides)
    if experiment is not None:
        if values.get('experiment', experiment) != experiment:
            logger.warning("%s names experiment %r; running %r", path, values['experiment'], experiment)
        values['experiment'] = experiment
    return build_config(values, base_dir=path.parent)
