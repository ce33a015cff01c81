import argparse
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from gadgets.config import ARTIFACT_VERSION, default_config_hash, load_config, resolve
from gadgets.exceptions import ConfigError, ConfigRejected, GadgetError
from gadgets.reporting import (
    build_manifest, read_manifest, render_csv, save_manifest_record, write_csv, write_manifest,
)
from gadgets.runners import SUBCOMMANDS, run_subcommand

logger = logging.getLogger('gadgets.cli')

# flag dest -> config key, for flags that simply override one key
FLAG_KEYS = {
    'absent': ('present', lambda v: not v),
    'order': ('order', None),
    'ref': ('ref_kind', None),
    'target': ('target_kind', None),
    'max_target': ('max_target_len', None),
    'seq': ('seq_len', None),
    'par': ('par_len', None),
    'ways': ('cache_ways', None),
    'trials': ('trials', None),
    'prepared': ('prepared', None),
    'bits': ('secret_bits', None),
    'granularity': ('timer_granularity', None),
    'jitter': ('timer_jitter', None),
    'no_guard': ('rob_guard', lambda v: not v),
    'misalign': ('misalign_delay', None),
    'no_prefetch': ('prefetch_enabled', lambda v: not v),
    'n_sets': ('n_sets', None),
    'no_fix': ('use_racing_fix', lambda v: not v),
    'iterations': ('iterations', None),
    'kind': ('race_kind', None),
    'ref_len': ('ref_len', None),
    'target_len': ('target_len', None),
    'rounds': ('rounds', None),
    'seed': ('seed', None),
}


class Command(BaseCommand):
    help = 'Run a timing-gadget experiment and write its CSV and manifest'
    requires_system_checks = []

    def get_version(self):
        return f"timing-lab {ARTIFACT_VERSION} (default config {default_config_hash()[:16]})"

    def add_arguments(self, parser):
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--config', help='key = value config file')
        common.add_argument('--seed', type=int, help='seed for every random stream')
        common.add_argument('--out', help='output directory (default: GADGETS_OUTPUT_DIR)')
        common.add_argument('--rounds', type=int, help='magnifier rounds')
        common.add_argument('--csv', action='store_true', help='also print the CSV to standard output')

        sub = parser.add_subparsers(dest='subcommand', required=True, metavar='subcommand')

        p = sub.add_parser('plru-pa', parents=[common], help='tree-PLRU presence/absence magnifier')
        p.add_argument('--absent', action='store_true', help='measure the absent state')

        p = sub.add_parser('plru-reorder', parents=[common], help='tree-PLRU reorder magnifier')
        p.add_argument('--order', choices=['AFirst', 'BFirst'])

        p = sub.add_parser('arbitrary', parents=[common], help='arbitrary-replacement magnifier')
        p.add_argument('--no-prefetch', action='store_true')
        p.add_argument('--n-sets', type=int)
        p.add_argument('--misalign', type=int)

        p = sub.add_parser('arith', parents=[common], help='arithmetic-only magnifier')
        p.add_argument('--no-guard', action='store_true', help='do not size the MUL chain past the ROB')
        p.add_argument('--misalign', type=int)

        p = sub.add_parser('repetition', parents=[common], help='flush+reload repetition gadget')
        p.add_argument('--no-fix', action='store_true', help='time the load stage directly')
        p.add_argument('--iterations', type=int)

        p = sub.add_parser('granularity', parents=[common], help='racing-gadget granularity sweep')
        p.add_argument('--ref', choices=['add', 'mul', 'div'])
        p.add_argument('--target', choices=['add', 'mul', 'div'])
        p.add_argument('--max-target', type=int)

        p = sub.add_parser('spectre-back', parents=[common], help='SpectreBack bit recovery')
        p.add_argument('--bits', type=int)
        p.add_argument('--granularity', type=int, help='timer granularity in cycles')
        p.add_argument('--jitter', type=int, help='timer jitter in cycles')

        p = sub.add_parser('classify', parents=[common], help='L1 hit versus memory miss classifier')
        p.add_argument('--trials', type=int)
        p.add_argument('--prepared', choices=['L1Hit', 'LLCMiss'])

        p = sub.add_parser('miss-prob', parents=[common], help='chance PAR evicts a SEQ line')
        p.add_argument('--seq', type=int)
        p.add_argument('--par', type=int)
        p.add_argument('--ways', type=int)
        p.add_argument('--trials', type=int)

        p = sub.add_parser('race', parents=[common], help='run one racing gadget')
        p.add_argument('--kind', choices=['presence', 'reorder'])
        p.add_argument('--ref', choices=['add', 'mul', 'div'])
        p.add_argument('--target', choices=['add', 'mul', 'div'])
        p.add_argument('--ref-len', type=int)
        p.add_argument('--target-len', type=int)

        p = sub.add_parser('rerun', help='re-execute a run from its manifest')
        p.add_argument('manifest', help='path to a .manifest.json file')
        p.add_argument('--out', help='output directory (default: next to the manifest)')
        p.add_argument('--csv', action='store_true')

    def _overrides(self, options):
        overrides = {}
        for dest, (key, convert) in FLAG_KEYS.items():
            value = options.get(dest)
            if value is None or value is False:
                continue
            overrides[key] = convert(value) if convert else value
        return overrides

    def handle(self, *args, **options):
        subcommand = options['subcommand']
        try:
            if subcommand == 'rerun':
                manifest_path = Path(options['manifest'])
                manifest = read_manifest(manifest_path)
                subcommand = manifest['subcommand']
                if subcommand not in SUBCOMMANDS:
                    raise ConfigRejected(f"manifest names unknown subcommand '{subcommand}'")
                config = resolve(manifest['config'])
                out_dir = Path(options.get('out') or manifest_path.parent)
            else:
                config = load_config(options.get('config'))
                overrides = self._overrides(options)
                if overrides:
                    config = config.with_overrides(**overrides)
                out_dir = Path(options.get('out') or settings.GADGETS_OUTPUT_DIR)
            output = run_subcommand(subcommand, config)
        except ConfigError as exc:
            logger.error(f"configuration error: {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code)
        except GadgetError as exc:
            logger.error(f"{subcommand} failed: {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code)

        paths = [write_csv(out_dir / f"{subcommand}.csv", output.rows)]
        for name, rows in output.tables.items():
            paths.append(write_csv(out_dir / f"{subcommand}.{name}.csv", rows))
        manifest = build_manifest(subcommand, config, paths, output.summary)
        write_manifest(out_dir / f"{subcommand}.manifest.json", manifest)
        save_manifest_record(manifest)

        if options.get('csv'):
            self.stdout.write(render_csv(output.rows), ending='')
        summary = ' '.join(f"{key}={value}" for key, value in output.summary.items())
        self.stdout.write(f"{subcommand}: {summary}")
