from collections.abc import Mapping
import csv
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

_MASK64 = (1 << 64) - 1

_logger = logging.getLogger("tscond")

PathLike = Union[str, "os.PathLike[str]"]


def splitmix64(value: int) -> int:
    """One round of the splitmix64 finalizer on a 64-bit integer."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Seed for the `index`-th independent job of a run.

    Defined as ``master_seed XOR splitmix64(index)`` truncated to 63 bits so
    it is accepted by both numpy and torch generators.

    """
    return ((master_seed & _MASK64) ^ splitmix64(index)) & (_MASK64 >> 1)


def fingerprint(values: np.ndarray) -> bytes:
    """SHA-256 of a matrix as row-major little-endian float64."""
    data = np.ascontiguousarray(values, dtype="<f8")
    return hashlib.sha256(data.tobytes(order="C")).digest()


def file_sha256(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def format_float(value: Optional[float]) -> str:
    """Full precision text for a float, empty for absent values."""
    if value is None:
        return ""
    return "%.17g" % value


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [format_float(v) if isinstance(v, float) or v is None else v for v in row]
            )


def write_manifest(
    artifact: PathLike, command: str, config: dict, inputs=(), outputs=(), **extra
):
    """Write ``<artifact>.manifest.json`` next to an output artifact."""
    manifest = {
        **extra,
        "command": command,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): file_sha256(p) for p in outputs if Path(p).exists()},
    }
    path = Path(f"{artifact}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_manifest(artifact: PathLike) -> Optional[dict]:
    path = Path(f"{artifact}.manifest.json")
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


def progress(iterable, **kwargs):
    """Wrap an iterable in a tqdm bar.

    Bars are shown only while the tscond logger is enabled for INFO and
    TSCOND_PROGRESS is not 0.

    """
    disable = kwargs.pop("disable", False) or not _logger.isEnabledFor(logging.INFO)
    disable = disable or os.environ.get("TSCOND_PROGRESS", "1") in ("0", "false", "no")
    return tqdm(iterable, disable=disable, **kwargs)


def update_dict_nested(d: dict, u: Mapping) -> dict:
    for k, v in u.items():
        if isinstance(v, Mapping):
            d[k] = update_dict_nested(d.get(k, {}), v)  # type:ignore
        else:
            d[k] = v

    return d
