#!/usr/bin/env python
"""
Administrative entry point for the lab.

    python manage.py experiment decay --config configs/decay.cfg

The installed `nla` console script is the same command without the
`experiment` word.
"""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "nla_site.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError("Django is required; install the project with `pip install -e .`") from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
