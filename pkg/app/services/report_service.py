"""
Report documents.

Every run produces one JSON document ``{"schema_version", "kind", "config",
"results", "metadata"}`` serialized with sorted keys; ``metadata`` (timestamps,
wall times, thread count) is the only block that differs between repeated
runs of the same configuration.
"""
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import orjson
import pandas as pd

from config import Config

logger = logging.getLogger(__name__)

_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def build_report(kind: str, config: dict, results: dict, metadata: dict | None = None) -> dict:
    return {
        "schema_version": Config.SCHEMA_VERSION,
        "kind": kind,
        "config": config,
        "results": results,
        "metadata": metadata or {},
    }


def dumps(document: dict) -> bytes:
    return orjson.dumps(document, option=_OPTIONS) + b"\n"


def deterministic_part(document: dict) -> bytes:
    """The serialized report without its metadata block."""
    return dumps({k: v for k, v in document.items() if k != "metadata"})


def write_report(document: dict, out: str | None) -> None:
    payload = dumps(document)
    if out is None:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info("wrote %s report to %s", document.get("kind"), path)


def write_table(frame: pd.DataFrame, out: str | None) -> Path | None:
    """Flat CSV next to the JSON report (same stem, ``.csv`` suffix)."""
    if out is None:
        return None
    path = Path(out).with_suffix(".csv")
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("wrote %d rows to %s", len(frame), path)
    return path
