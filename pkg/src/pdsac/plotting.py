"""Training-curve and top-down trajectory plots as hand-rolled SVG.

Output is deterministic: the same inputs yield byte-identical files, so the
artifacts diff cleanly. A gnuplot-compatible .dat file rides along with every
reward plot for people who want their own styling.
"""

import os

import numpy as np

from . import world as world_mod
from .errors import ConfigError, LayoutError
from .evaluate import read_trajectory
from .orchestrator import METRICS_COLUMNS

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def moving_average(seq, window):
    """Trailing mean over at most `window` samples, same length as seq."""
    if window < 1:
        raise ValueError("window must be >= 1")
    seq = np.asarray(seq, dtype=np.float64)
    out = np.empty_like(seq)
    csum = np.concatenate([[0.0], np.cumsum(seq)])
    for i in range(len(seq)):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def read_metrics(path):
    """Parse a metrics CSV into (config_hash, variant, column arrays)."""
    chash = ""
    header = None
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    if key == "config_hash":
                        chash = val
                    continue
                parts = line.split(",")
                if header is None:
                    header = parts
                    if tuple(header) != METRICS_COLUMNS:
                        raise ConfigError(
                            f"unexpected metrics columns in {path}: {header}")
                    continue
                rows.append(parts)
    except OSError as exc:
        raise ConfigError(f"cannot read metrics {path}: {exc}") from exc
    if header is None or not rows:
        raise ConfigError(f"metrics file {path} has no data rows")
    variant = rows[0][2]
    try:
        steps = np.array([float(r[0]) for r in rows])
        reward_ma = np.array([float(r[6]) for r in rows])
        success_ma = np.array([float(r[7]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed metrics row in {path}: {exc}") from exc
    return chash, variant, {"learner_step": steps, "eval_reward_ma": reward_ma,
                            "eval_success_ma": success_ma}


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _fmt(v):
    return f"{v:.2f}"


def _tick_label(v):
    return f"{v:g}"


class _Svg:
    def __init__(self, width, height):
        self.w = width
        self.h = height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]

    def line(self, x1, y1, x2, y2, stroke="black", width=1.0, opacity=1.0):
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>'
        )

    def polyline(self, pts, stroke, width=1.5, opacity=1.0):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"/>'
        )

    def rect(self, x, y, w, h, fill, opacity=1.0):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{fill}" '
            f'fill-opacity="{_fmt(opacity)}"/>'
        )

    def circle(self, cx, cy, r, fill):
        self.parts.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" '
            f'fill="{fill}"/>'
        )

    def text(self, x, y, s, size=12, anchor="start", fill="black"):
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}" '
            f'fill="{fill}">{s}</text>'
        )

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def plot_rewards(csv_paths, out_svg):
    """Overlay eval-reward curves from metrics CSVs; returns (svg, dat)."""
    if not csv_paths:
        raise ConfigError("no metrics files given")
    series = []
    for p in csv_paths:
        _, variant, cols = read_metrics(p)
        keep = np.isfinite(cols["eval_reward_ma"])
        label = variant
        if any(s[0] == label for s in series):
            label = f"{variant}:{os.path.splitext(os.path.basename(p))[0]}"
        series.append((label, cols["learner_step"][keep],
                       cols["eval_reward_ma"][keep]))

    xs = np.concatenate([s[1] for s in series if len(s[1])] or [np.zeros(1)])
    ys = np.concatenate([s[2] for s in series if len(s[2])] or [np.zeros(1)])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo -= pad
    y_hi += pad

    W, H = 840, 520
    ml, mr, mt, mb = 70, 20, 20, 50
    pw, ph = W - ml - mr, H - mt - mb

    def sx(x):
        return ml + pw * (x - x_lo) / max(x_hi - x_lo, 1e-12)

    def sy(y):
        return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    svg = _Svg(W, H)
    svg.line(ml, mt + ph, ml + pw, mt + ph)
    svg.line(ml, mt, ml, mt + ph)
    for tx in _ticks(x_lo, x_hi):
        svg.line(sx(tx), mt + ph, sx(tx), mt + ph + 5)
        svg.text(sx(tx), mt + ph + 20, _tick_label(tx), anchor="middle")
    for ty in _ticks(y_lo, y_hi):
        svg.line(ml - 5, sy(ty), ml, sy(ty))
        svg.text(ml - 8, sy(ty) + 4, _tick_label(ty), anchor="end")
    svg.text(ml + pw / 2, H - 12, "learner updates", anchor="middle")
    svg.text(14, mt + 12, "reward (moving average)")

    for i, (label, x, y) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if len(x):
            svg.polyline(list(zip(map(sx, x), map(sy, y))), stroke=color)
        ly = mt + 16 + 18 * i
        svg.line(ml + 10, ly, ml + 34, ly, stroke=color, width=2.0)
        svg.text(ml + 40, ly + 4, label)

    with open(out_svg, "w", encoding="utf-8") as f:
        f.write(svg.render())
    dat_path = os.path.splitext(out_svg)[0] + ".dat"
    with open(dat_path, "w", encoding="utf-8") as f:
        f.write("# eval reward moving average per learner step\n")
        for i, (label, x, y) in enumerate(series):
            f.write(f"# series {i}: {label}\n")
            f.write("# learner_step eval_reward_ma\n")
            for xv, yv in zip(x, y):
                f.write(f"{xv:g} {yv!r}\n")
            f.write("\n\n")
    return out_svg, dat_path


def _z_opacity(z, z_lo, z_hi, levels=8):
    if z_hi <= z_lo:
        return 1.0
    frac = (z - z_lo) / (z_hi - z_lo)
    level = min(levels - 1, int(frac * levels))
    return 0.3 + 0.7 * level / (levels - 1)


def plot_trajectories(traj_paths, layout_path, out_svg, env_id=None):
    """Top-down room view: obstacles black, start green, goals red, paths
    blue with altitude mapped to stroke opacity."""
    layouts = world_mod.load_layouts(layout_path)
    version = layouts["layout_version"]
    parsed = []
    for p in traj_paths:
        comments, rows = read_trajectory(p)
        if comments.get("layout_version") != str(version):
            raise LayoutError(
                f"trajectory {p} from layout {comments.get('layout_version')!r},"
                f" plotting against {version!r}")
        parsed.append((comments, rows))
    env_ids = {c.get("env_id") for c, _ in parsed}
    if len(env_ids) > 1:
        raise LayoutError(f"trajectories span environments {sorted(env_ids)}")
    if parsed:
        env_id = int(env_ids.pop())
    elif env_id is None:
        raise LayoutError("no trajectories and no environment id given")
    env = layouts["environments"][str(env_id)]
    half = float(env["room"]["half_extent"])

    W = 640
    margin = 40
    scale = (W - 2 * margin) / (2 * half)

    def sx(x):
        return margin + (x + half) * scale

    def sy(y):
        return margin + (half - y) * scale

    svg = _Svg(W, W)
    svg.parts.append(
        f'<rect x="{_fmt(margin)}" y="{_fmt(margin)}" '
        f'width="{_fmt(W - 2 * margin)}" height="{_fmt(W - 2 * margin)}" '
        f'fill="none" stroke="black" stroke-width="1.50"/>')
    for ob in env["obstacles"]:
        cx, cy = float(ob["center"][0]), float(ob["center"][1])
        sxs, sys_ = float(ob["size"][0]), float(ob["size"][1])
        svg.rect(sx(cx - sxs / 2.0), sy(cy + sys_ / 2.0),
                 sxs * scale, sys_ * scale, fill="black")

    all_z = np.concatenate([rows[:, 3] for _, rows in parsed]) if parsed \
        else np.zeros(1)
    z_lo, z_hi = float(all_z.min()), float(all_z.max())
    for _, rows in parsed:
        i = 0
        n = len(rows)
        # chunk consecutive samples sharing an opacity level so a path is a
        # handful of polylines instead of one element per step
        while i < n - 1:
            op = _z_opacity(rows[i, 3], z_lo, z_hi)
            j = i + 1
            while j < n and _z_opacity(rows[j, 3], z_lo, z_hi) == op:
                j += 1
            stop = min(j + 1, n)
            pts = [(sx(x), sy(y)) for x, y in rows[i:stop, 1:3]]
            svg.polyline(pts, stroke="#1f4fd6", width=1.5, opacity=op)
            i = j

    goals = []
    for c, _ in parsed:
        g = tuple(float(v) for v in c["target"].split(","))
        if g not in goals:
            goals.append(g)
    for g in goals:
        svg.circle(sx(g[0]), sy(g[1]), 6, fill="red")
    start = env["start"]
    svg.circle(sx(float(start[0])), sy(float(start[1])), 6, fill="green")
    with open(out_svg, "w", encoding="utf-8") as f:
        f.write(svg.render())
    return out_svg
