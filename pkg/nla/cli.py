"""Console entry point: `nla <experiment> --config <path> ...`."""
import os
import sys


def main(argv=None):
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "nla_site.settings")
    from django.core.management import execute_from_command_line

    argv = sys.argv if argv is None else argv
    execute_from_command_line(["nla", "experiment", *argv[1:]])


if __name__ == "__main__":
    main()
