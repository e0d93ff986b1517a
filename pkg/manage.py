#!/usr/bin/env python
"""Command-line utility for the toolkit: ``python manage.py <subcommand> ...``."""
import sys


def main():
    try:
        import django  # noqa: F401
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    from clipkit.cli import run
    sys.exit(run(sys.argv[1:], prog=sys.argv[0]))


if __name__ == '__main__':
    main()
