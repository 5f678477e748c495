"""File formats shared by the command line: ranges, config files, CSV/JSON.

* Ranges are ``start:stop`` or ``start:stop:step``; the stop is included
  when it lies on the grid within ``1e-9 step``.
* Config files are flat ``key=value`` lines; ``#`` starts a comment.
* CSV files start with ``# dashline <version> config_sha256=<hash>`` and
  then a header row; floats are written with 17 significant digits.
* Every write goes to a temporary file in the target directory which is
  then renamed over the destination, so readers never see partial files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from typing import Iterable, List, Mapping, Sequence

from . import __version__

RANGE_TOL = 1e-9
EXCLUDED_FROM_HASH = ("out", "config")


class RangeError(ValueError):
    """A ``start:stop:step`` range (or value list) could not be parsed."""


def format_value(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    if isinstance(x, complex):
        return f"{format(x.real, '.17g')}{format(x.imag, '+.17g')}j"
    if hasattr(x, "item") and not isinstance(x, (list, tuple, str)):
        return format_value(x.item())
    return str(x)


def parse_range(text: str, integer: bool = False, default_step=None) -> List:
    """Expand ``start:stop[:step]`` into a list (stop inclusive).

    Integer ranges default to step 1; float ranges need an explicit step
    unless ``default_step`` is given.  ``start == stop`` gives one value.
    """
    parts = str(text).strip().split(":")
    if len(parts) not in (2, 3) or any(p.strip() == "" for p in parts):
        raise RangeError(f"malformed range {text!r}; expected start:stop[:step]")
    conv = int if integer else float
    try:
        start, stop = conv(parts[0]), conv(parts[1])
        if len(parts) == 3:
            step = conv(parts[2])
        elif integer:
            step = 1
        elif default_step is not None:
            step = default_step
        else:
            raise RangeError(f"float range {text!r} needs a step")
    except ValueError as exc:
        if isinstance(exc, RangeError):
            raise
        raise RangeError(f"malformed range {text!r}: {exc}") from None
    if not integer and not all(math.isfinite(v) for v in (start, stop, step)):
        raise RangeError(f"range {text!r} has non-finite entries")
    if step <= 0:
        raise RangeError(f"range {text!r} needs a positive step")
    if stop < start:
        raise RangeError(f"range {text!r} has stop < start")
    if integer:
        return list(range(start, stop + 1, step))
    n = int(math.floor((stop - start) / step + RANGE_TOL))
    values = [start + k * step for k in range(n + 1)]
    return values


def parse_values(text: str, integer: bool = False) -> List:
    """A single value, a comma list, or a ``start:stop:step`` range."""
    s = str(text).strip()
    if ":" in s:
        return parse_range(s, integer=integer)
    conv = int if integer else float
    try:
        return [conv(v) for v in s.split(",") if v.strip() != ""]
    except ValueError:
        raise RangeError(f"malformed value list {text!r}") from None


def read_config(path: str) -> dict:
    """Read a flat ``key=value`` config file (``#`` comments, blank lines ok)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value.strip()
    return out


def config_text(command: str, resolved: Mapping[str, object]) -> str:
    lines = [f"# dashline {__version__} resolved config", f"# command: {command}"]
    lines += [f"{k}={format_value(v)}" for k, v in sorted(resolved.items()) if v is not None]
    return "\n".join(lines) + "\n"


def config_hash(command: str, resolved: Mapping[str, object]) -> str:
    """SHA-256 over the canonical ``key=value`` lines (output paths excluded)."""
    body = "\n".join(f"{k}={format_value(v)}" for k, v in sorted(resolved.items())
                     if k not in EXCLUDED_FROM_HASH and v is not None)
    return hashlib.sha256(f"command={command}\n{body}".encode()).hexdigest()


def check_writable(path: str) -> None:
    """Fail early (OSError) if ``path`` cannot be created or replaced."""
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"directory does not exist: {directory}")
    if not os.access(directory, os.W_OK):
        raise PermissionError(f"directory not writable: {directory}")
    if os.path.isdir(path):
        raise IsADirectoryError(f"output path is a directory: {path}")


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".dashline-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence], digest: str,
             comments: Sequence[str] = (), blocks: Sequence[tuple] = ()) -> str:
    """CSV text: version/hash comment, extra comments, header, rows.

    ``blocks`` holds further ``(title, header, rows)`` tables appended after
    a ``# <title>`` comment line.
    """
    buf = io.StringIO()
    buf.write(f"# dashline {__version__} config_sha256={digest}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(x) for x in row])
    for title, hdr, brows in blocks:
        buf.write(f"# {title}\n")
        w.writerow(hdr)
        for row in brows:
            w.writerow([format_value(x) for x in row])
    return buf.getvalue()


def read_csv(path_or_text: str, from_text: bool = False):
    """Parse a dashline CSV back into ``(blocks, comments)``.

    ``blocks`` is a list of ``(header, rows)``; rows are lists of strings.
    """
    text = path_or_text if from_text else open(path_or_text, encoding="utf-8").read()
    blocks, comments = [], []
    header, rows = None, []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
            if header is not None:
                blocks.append((header, rows))
                header, rows = None, []
            continue
        if not line.strip():
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = cells
        else:
            rows.append(cells)
    if header is not None:
        blocks.append((header, rows))
    return blocks, comments


def json_text(obj) -> str:
    def default(o):
        if hasattr(o, "tolist"):
            return o.tolist()
        if hasattr(o, "item"):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return json.dumps(obj, indent=1, sort_keys=False, default=default, allow_nan=True) + "\n"
