"""Output persistence: atomic writes, stable CSV/JSON schemas, SVG polylines.

All files are UTF-8 with LF line endings and full-precision reals (%.17g);
metadata (version, seed, config hash) rides along as '#'-prefixed comment
lines before the CSV header, or a "meta" object in JSON.  Files never embed
timestamps or thread counts, so reruns are byte-identical.
"""
from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile

__version__ = "0.1.0"


def version_string() -> str:
    """git-describe when available, the package version otherwise."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def fmt(x) -> str:
    """Full-precision decimal rendering of one value."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def meta_lines(meta: dict) -> list:
    return [f"# {k}: {v}" for k, v in meta.items()]


def write_csv(path: str, header, rows, meta: dict | None = None) -> None:
    lines = meta_lines(meta or {})
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return fmt(obj)
    return obj


def write_json(path: str, payload: dict, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}}
    doc.update(_jsonable(payload))
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_svg_polyline(path: str, xs, ys, title: str = "", width: int = 640, height: int = 400) -> None:
    """A minimal deterministic polyline plot (diagnostic, never numeric source)."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    if not xs or len(xs) != len(ys):
        raise ValueError("need equal nonempty coordinate lists")
    pad = 40
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0

    def sx(v):
        return pad + (v - x0) / xr * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / yr * (height - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{pad}" y="20" font-family="monospace" font-size="13">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{width-2*pad}" height="{height-2*pad}" '
        'fill="none" stroke="#999"/>',
        f'<text x="{pad}" y="{height-10}" font-family="monospace" font-size="11">'
        f"x: [{fmt(x0)}, {fmt(x1)}]  y: [{fmt(y0)}, {fmt(y1)}]</text>",
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>',
        "</svg>",
    ]
    atomic_write_text(path, "\n".join(parts) + "\n")
