"""Render experiment CSV curves as plain SVG polylines and summarize assertions."""

import csv
import json
import math
from pathlib import Path

WIDTH, HEIGHT, PAD = 480, 320, 40
COLORS = ("#1f5fa8", "#c0392b", "#2e8b57")

# csv name -> (x column, [y columns], title)
CURVES = {
    "rd.csv": ("D", ["R"], "rate vs distortion"),
    "rr.csv": ("W", ["R"], "rate vs reward"),
    "flow.csv": ("step", ["cumulative", "A"], "semantic flow"),
    "loss.csv": ("step", ["loss"], "training loss"),
}


class ReportError(ValueError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


def _fmt(x):
    return repr(round(x, 3))


def polyline_svg(series, x_label, title):
    """SVG text with one polyline per ``(name, xs, ys)`` in ``series``."""
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(x):
        return PAD + (x - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def sy(y):
        return HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
           f'<text x="{PAD}" y="20" font-size="14">{title}</text>',
           f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
           f'<text x="{WIDTH // 2}" y="{HEIGHT - 8}" font-size="12">{x_label}</text>']
    for k, (name, px, py) in enumerate(series):
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(px, py))
        color = COLORS[k % len(COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" points="{pts}"/>')
        out.append(f'<text x="{WIDTH - PAD - 60}" y="{PAD + 14 * k}" font-size="12" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _read_curve(path, x_col, y_cols):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    series = []
    for y in y_cols:
        pts = []
        for r in rows:
            try:
                xv, yv = float(r[x_col]), float(r[y])
            except (KeyError, TypeError, ValueError):
                raise ReportError(f"column {x_col!r} or {y!r} missing or non-numeric", str(path))
            if math.isfinite(xv) and math.isfinite(yv):
                pts.append((xv, yv))
        pts.sort(key=lambda p: p[0])
        if pts:
            series.append((y, [p[0] for p in pts], [p[1] for p in pts]))
    return series


def render_report(run_dir):
    """Write one SVG per known curve and ``summary.txt``; returns the summary dict.

    A result with no points produces the summary only.
    """
    run_dir = Path(run_dir)
    result_path = run_dir / "result.json"
    try:
        with open(result_path) as fh:
            result = json.load(fh)
    except FileNotFoundError:
        raise ReportError("result.json not found", str(result_path))
    except json.JSONDecodeError as exc:
        raise ReportError(f"malformed report JSON: {exc}", str(result_path))
    if not isinstance(result, dict) or not isinstance(result.get("points"), list) \
            or not isinstance(result.get("assertions"), list):
        raise ReportError("report JSON needs 'points' and 'assertions' lists", str(result_path))
    plots = []
    if result["points"]:
        for name, (x_col, y_cols, title) in CURVES.items():
            path = run_dir / name
            if not path.exists():
                continue
            series = _read_curve(path, x_col, y_cols)
            if series:
                svg = run_dir / (Path(name).stem + ".svg")
                svg.write_text(polyline_svg(series, x_col, title))
                plots.append(svg.name)
    lines = [f"command: {result.get('command', '?')}", f"seed: {result.get('seed', '?')}"]
    failed = 0
    for a in result["assertions"]:
        ok = bool(a.get("passed"))
        failed += not ok
        lines.append(f"{'PASS' if ok else 'FAIL'}  {a.get('name', '?')}")
    lines.append(f"{len(result['assertions']) - failed}/{len(result['assertions'])} assertions passed")
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    return {"plots": plots, "failed": failed, "total": len(result["assertions"])}
