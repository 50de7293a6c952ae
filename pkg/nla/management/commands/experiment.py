"""
Run one experiment from a config file.

Usage:
    python manage.py experiment decay --config configs/decay.cfg
    nla decay --config configs/decay.cfg --out results/decay --override model.q=2

Exit codes: 0 all bounds hold, 1 a bound is violated, 2 usage or config
error, 3 the run itself failed (tail overflow, instability, bad grid or
unwritable output).
"""
from django.core.management.base import BaseCommand, CommandError

from nla.config import EXPERIMENTS, ConfigError, load_config
from nla.diagnostics import InsufficientSamples
from nla.experiments import run
from nla.kernels import UnderresolvedKernel
from nla.solver import DomainOverflow, StabilityViolation

EXIT_VIOLATED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

RUNTIME_ERRORS = (DomainOverflow, StabilityViolation, UnderresolvedKernel, InsufficientSamples, ValueError,
                  OSError)


class Command(BaseCommand):
    help = 'Run a nonlocal convection-diffusion experiment and write summary.csv, trajectories and verdict.txt'

    def add_arguments(self, parser):
        parser.add_argument('experiment', choices=EXPERIMENTS, help='Experiment to run')
        parser.add_argument('--config', required=True, help='Path to the key = value config file')
        parser.add_argument('--out', help='Output directory (overrides out_dir)')
        parser.add_argument('--override', action='append', default=[], metavar='KEY=VALUE',
                            help='Replace one config value; may be repeated')

    def handle(self, *args, **options):
        overrides = list(options['override'])
        if options['out']:
            overrides.append(f"out_dir={options['out']}")

        try:
            config = load_config(options['config'], overrides, experiment=options['experiment'])
        except ConfigError as e:
            raise CommandError(f"config error: {e}", returncode=EXIT_CONFIG)

        try:
            code, result = run(config)
        except RUNTIME_ERRORS as e:
            raise CommandError(
                f"{config.experiment} failed on {config.grid}: {type(e).__name__}: {e}",
                returncode=EXIT_RUNTIME,
            )

        if code:
            self.stdout.write(self.style.ERROR(result.verdict))
            raise CommandError(f"bounds violated, see {config.out_dir / 'summary.csv'}",
                               returncode=EXIT_VIOLATED)
        self.stdout.write(self.style.SUCCESS(result.verdict))
