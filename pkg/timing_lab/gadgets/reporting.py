"""CSV output and run manifests.

CSVs are comma separated with a single header row; every value is numeric
or a bare token, so nothing needs quoting. A manifest JSON sits next to each
CSV and holds everything needed to reproduce it.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Iterable, Optional

from django.db import DatabaseError

from .config import ARTIFACT_VERSION, ResolvedConfig
from .exceptions import ParseError

logger = logging.getLogger(__name__)


def _cell(value):
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return repr(round(value, 6))
    if value is None:
        return ''
    return value


def render_csv(rows: list[dict], header: Optional[list[str]] = None) -> str:
    header = header or (list(rows[0].keys()) if rows else [])
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(row.get(column)) for column in header])
    return buffer.getvalue()


def write_csv(path, rows: list[dict], header: Optional[list[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as f:
        f.write(render_csv(rows, header))
    logger.debug(f"wrote {len(rows)} rows to {path}")
    return path


def timing_rows(result) -> list[dict]:
    """Per-instruction timing table of a SimResult"""
    return [
        {
            'id': t.id,
            'kind': t.kind.value,
            'tag': t.path_tag or '',
            'alloc': t.alloc_cycle,
            'issue': t.issue_cycle,
            'complete': t.complete_cycle,
            'retire': t.retire_cycle,
            'squashed': t.squashed,
        }
        for t in result.timings
    ]


def event_rows(events: Iterable) -> list[dict]:
    return [
        {
            'cycle': e.cycle,
            'level': e.level,
            'set': e.set_index,
            'tag': e.tag,
            'result': 'hit' if e.hit else 'miss',
            'victim': e.victim,
        }
        for e in events
    ]


def build_manifest(subcommand: str, config: ResolvedConfig, output_paths: list[str],
                   summary: Optional[dict] = None, argv: Optional[list[str]] = None) -> dict:
    return {
        'subcommand': subcommand,
        'config': config.as_dict(),
        'config_hash': config.config_hash(),
        'seed': config.seed,
        'output_paths': [str(p) for p in output_paths],
        'artifact_version': ARTIFACT_VERSION,
        'argv': list(argv or []),
        'summary': summary or {},
    }


def write_manifest(path, manifest: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + '\n', encoding='utf-8')
    logger.info(f"manifest written to {path}")
    return path


def read_manifest(path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ParseError(0, f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(manifest, dict) or 'subcommand' not in manifest or 'config' not in manifest:
        raise ParseError(0, f"{path} is not a run manifest")
    return manifest


def save_manifest_record(manifest: dict):
    """Persist a manifest to the database; returns None when the table is unavailable"""
    from .models import RunManifest

    try:
        return RunManifest.objects.create(
            subcommand=manifest['subcommand'],
            config=manifest['config'],
            seed=manifest['seed'],
            output_paths=manifest['output_paths'],
            artifact_version=manifest['artifact_version'],
            summary=json.loads(json.dumps(manifest.get('summary', {}), default=str)),
        )
    except (DatabaseError, OverflowError) as exc:
        logger.warning(f"manifest for {manifest['subcommand']} not stored in the database: {exc}")
        return None
