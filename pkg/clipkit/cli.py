"""Single entry point: ``run(argv)`` dispatches to the management commands.

Hyphenated subcommand names (``export-embeddings``, ``synthetic-corpus``)
map to the command modules of the same name with underscores.
"""
import os
import sys

ALIASES = {
    'export-embeddings': 'export_embeddings',
    'synthetic-corpus': 'synthetic_corpus',
}


def run(argv=None, prog='sarclip') -> int:
    """Run one subcommand; returns 0 on success, 1 on validation errors, 2 on internal errors."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sarclip.settings')
    from django.core.management import execute_from_command_line

    argv = list(sys.argv[1:] if argv is None else argv)
    if argv:
        argv[0] = ALIASES.get(argv[0], argv[0])
    try:
        execute_from_command_line([prog] + argv)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


def main():
    sys.exit(run())
