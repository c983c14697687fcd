"""Self-contained SVG line charts from run CSVs.  No rendering dependencies;
output is deterministic down to the byte for identical inputs."""

import os

from .exceptions import ConfigError

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
    "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
)
WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 16, 16, 40


class PlotFormatError(ValueError):
    """Input CSVs do not share a usable schema."""


def read_csv(path):
    """Header columns and float rows of one run CSV ('#' lines skipped)."""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(tok) if tok else float("nan") for tok in line.split(",")])
    if header is None:
        raise PlotFormatError(f"{path} has no header line")
    return header, rows


def emit_plot(csv_paths, out_svg, x_column="epoch", y_column="full_train_loss",
              log_y=False):
    """Write one polyline per CSV with a legend built from the file names."""
    if not csv_paths:
        raise ConfigError("no CSV inputs")
    series = []
    for path in csv_paths:
        header, rows = read_csv(path)
        if x_column not in header or y_column not in header:
            raise PlotFormatError(
                f"{path} lacks columns {x_column!r}/{y_column!r}; has {header}"
            )
        xi, yi = header.index(x_column), header.index(y_column)
        pts = [(row[xi], row[yi]) for row in rows if row[yi] == row[yi]]
        if not pts:
            raise PlotFormatError(f"{path} has no plottable rows")
        name = os.path.splitext(os.path.basename(path))[0]
        series.append((name, pts))

    import math

    def ty(v):
        if log_y:
            if v <= 0:
                raise PlotFormatError("log scale needs positive values")
            return math.log10(v)
        return v

    xs = [x for _, pts in series for x, _ in pts]
    ys = [ty(y) for _, pts in series for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    inner_w = WIDTH - MARGIN_L - MARGIN_R
    inner_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(x):
        return MARGIN_L + inner_w * (x - x_lo) / (x_hi - x_lo)

    def py(y):
        return MARGIN_T + inner_h * (1.0 - (ty(y) - y_lo) / (y_hi - y_lo))

    def num(v):
        return f"{v:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>',
    ]
    # axis labels: min/max only, plus the column names
    y_lab_hi = f"{10 ** y_hi:.4g}" if log_y else f"{y_hi:.4g}"
    y_lab_lo = f"{10 ** y_lo:.4g}" if log_y else f"{y_lo:.4g}"
    parts.append(f'<text x="4" y="{MARGIN_T + 10}">{y_lab_hi}</text>')
    parts.append(f'<text x="4" y="{HEIGHT - MARGIN_B}">{y_lab_lo}</text>')
    parts.append(
        f'<text x="{MARGIN_L}" y="{HEIGHT - 8}">{x_column}: '
        f'{x_lo:.4g} .. {x_hi:.4g}   ({y_column}'
        f'{", log scale" if log_y else ""})</text>'
    )
    for k, (name, pts) in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        coords = " ".join(f"{num(px(x))},{num(py(y))}" for x, y in pts)
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{coords}"/>'
        )
        ly = MARGIN_T + 14 + 14 * k
        lx = WIDTH - MARGIN_R - 180
        parts.append(
            f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(f'<text x="{lx + 24}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    data = "\n".join(parts) + "\n"
    with open(out_svg, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    return out_svg
