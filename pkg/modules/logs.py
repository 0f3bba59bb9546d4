"""
Episode logs and channel dumps.

Episode logs are JSONL: a header line, one line per frame and a summary line, all with sorted keys so that the same
run always produces the same bytes. Tables are CSV and frames can be dumped as binary PGM.
"""
import csv
import io
import json
import logging
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tenacity import after_log, retry, retry_if_exception_type, stop_after_attempt, wait_fixed

from modules.core import SCHEMA_VERSION
from modules.tracking import CSV_COLUMNS

EPISODE_SCHEMA = "episode-log"

log = logging.getLogger()


class LogWriteFailed(Exception):
    """Episode log could not be written."""

    ...


class LogFormatError(Exception):
    """An episode log could not be parsed."""

    ...


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(document: Dict) -> str:
    return json.dumps(document, sort_keys=True, separators=(",", ":"), default=_jsonable)


def episode_header(scenario: str, seed: int, skill: str, **extra) -> Dict[str, object]:
    return {
        "kind": "header",
        "schema": EPISODE_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario,
        "seed": seed,
        "skill": skill,
        **extra,
    }


def episode_log_text(header: Dict, records: Iterable[Dict], summary: Dict) -> str:
    """
    :param header: episode header (see episode_header)
    :param records: per-frame records {frame, inputs, command, state, truth}
    :param summary: episode summary
    :return: JSONL text
    """
    lines = [dumps(header)]
    lines += [dumps({"kind": "frame", **record}) for record in records]
    lines.append(dumps({"kind": "summary", **summary}))
    return "\n".join(lines) + "\n"


def parse_episode_log(text: str) -> Tuple[Dict, List[Dict], Optional[Dict]]:
    """
    :param text: JSONL episode log
    :return: (header, frame records, summary or None)
    :raise LogFormatError: on malformed lines, a missing header or an unknown schema version
    """
    header: Optional[Dict] = None
    records: List[Dict] = []
    summary: Optional[Dict] = None
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as e:
            raise LogFormatError(f"Line {number}: {e}")
        kind = entry.pop("kind", None)
        if kind == "header":
            header = entry
        elif kind == "frame":
            records.append(entry)
        elif kind == "summary":
            summary = entry
        else:
            raise LogFormatError(f"Line {number}: unknown entry kind '{kind}'")
    if header is None:
        raise LogFormatError("Episode log has no header")
    if header.get("schema") != EPISODE_SCHEMA or header.get("schema_version") != SCHEMA_VERSION:
        raise LogFormatError(f"Unsupported log schema {header.get('schema')} v{header.get('schema_version')}")
    return header, records, summary


def read_episode_log(filepath: str) -> Tuple[Dict, List[Dict], Optional[Dict]]:
    try:
        with open(filepath) as fd:
            return parse_episode_log(fd.read())
    except OSError as e:
        raise LogFormatError(f"Cannot read {filepath}: {e}")


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buffer.getvalue()


def tracking_csv(rows: Iterable[Sequence]) -> str:
    """Per-marker raw and filtered channels as recorded by MarkerTracker.rows."""
    return csv_text(CSV_COLUMNS, rows)


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary 8-bit PGM."""
    pixels = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def make_directory(directory: str):
    """
    :raise LogWriteFailed: if the directory cannot be created
    """
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        log.error(f"Failed to create directory {directory}: {e}")
        raise LogWriteFailed(f"Cannot create {directory}: {e}")


@retry(
    stop=stop_after_attempt(3),
    wait=wait_fixed(0.2),
    retry=retry_if_exception_type(LogWriteFailed),
    reraise=True,
    after=after_log(log, logging.WARNING),
)
def write_to_disk(filepath: str, content: bytes):
    """
    Write content to disk, retrying transient failures.

    :param filepath: destination file path
    :param content: bytes to write
    :raise LogWriteFailed: when the last attempt fails
    """
    try:
        with open(filepath, "wb") as fd:
            fd.write(content)
    except OSError as e:
        log.error(f"Failed to write file {filepath} to disk: {e}")
        raise LogWriteFailed(e)


def write_text(filepath: str, text: str):
    write_to_disk(filepath, text.encode("utf-8"))
    log.debug(f"Written {filepath}")


def write_json(filepath: str, document: Dict):
    write_text(filepath, json.dumps(document, sort_keys=True, indent=1, default=_jsonable) + "\n")
