"""Console entry point: ``timing-lab <subcommand> ...`` runs the ``gadget`` management command."""
import os
import sys

import django
from django.core.management.base import CommandError


def main(argv=None) -> int:
    """Run one subcommand and return its exit status (0 ok, 1 config error, 2 experiment error)"""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'timing_lab.settings')
    django.setup()

    from gadgets.management.commands.gadget import Command

    command = Command()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = command.create_parser('timing-lab', 'gadget')
        options = vars(parser.parse_args(argv))
        args = options.pop('args', ())
        command.execute(*args, **options)
    except CommandError as exc:
        command.stderr.write(f"error: {exc}")
        return exc.returncode
    except SystemExit as exc:
        # --help and --version
        return exc.code if isinstance(exc.code, int) else 0
    return 0


if __name__ == '__main__':
    sys.exit(main())
