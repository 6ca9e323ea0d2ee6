"""Static SVG panels for experiment summaries (log-scaled increment axis)."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from pathlib import Path

WIDTH, HEIGHT = 480, 320
MARGIN = 50
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"]


class Panel:
    def __init__(self, title: str, xs, y_values, log_y: bool = False):
        self.svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                              width=str(WIDTH), height=str(HEIGHT), viewBox=f"0 0 {WIDTH} {HEIGHT}")
        ET.SubElement(self.svg, "title").text = title
        self.log_y = log_y
        self.x_lo, self.x_hi = self._range([math.log10(x + 1) for x in xs])
        ys = [self._ty(y) for y in y_values if self._ok(y)]
        self.y_lo, self.y_hi = self._range(ys or [0.0, 1.0])
        self._axes(title)

    @staticmethod
    def _range(vals):
        lo, hi = min(vals), max(vals)
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    def _ok(self, y) -> bool:
        return math.isfinite(y) and (y > 0 or not self.log_y)

    def _ty(self, y):
        return math.log10(y) if self.log_y else y

    def px(self, x) -> float:
        frac = (math.log10(x + 1) - self.x_lo) / (self.x_hi - self.x_lo)
        return MARGIN + frac * (WIDTH - 2 * MARGIN)

    def py(self, y) -> float:
        frac = (self._ty(y) - self.y_lo) / (self.y_hi - self.y_lo)
        return HEIGHT - MARGIN - frac * (HEIGHT - 2 * MARGIN)

    def _axes(self, title):
        g = ET.SubElement(self.svg, "g", stroke="black", fill="none")
        ET.SubElement(g, "rect", x=str(MARGIN), y=str(MARGIN),
                      width=str(WIDTH - 2 * MARGIN), height=str(HEIGHT - 2 * MARGIN))
        t = ET.SubElement(self.svg, "text", x=str(WIDTH // 2), y="20", **{"text-anchor": "middle"})
        t.text = title
        lab = ET.SubElement(self.svg, "text", x=str(WIDTH // 2), y=str(HEIGHT - 10), **{"text-anchor": "middle"})
        lab.text = "increment (log scale)"
        for frac, text in ((0.0, self.y_lo), (1.0, self.y_hi)):
            y = HEIGHT - MARGIN - frac * (HEIGHT - 2 * MARGIN)
            val = 10**text if self.log_y else text
            ET.SubElement(self.svg, "text", x="4", y=f"{y:.1f}").text = f"{val:.3g}"

    def series(self, name: str, xs, ys, color: str, dashed: bool = False):
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}" for x, y in zip(xs, ys) if self._ok(y))
        attrs = {"points": pts, "fill": "none", "stroke": color, "stroke-width": "1.5"}
        if dashed:
            attrs["stroke-dasharray"] = "6,4"
        line = ET.SubElement(self.svg, "polyline", **attrs)
        line.set("data-series", name)

    def boxes(self, xs, lo, q1, med, q3, hi, color: str):
        g = ET.SubElement(self.svg, "g", stroke=color, fill="none")
        for x, a, b, c, e, f in zip(xs, lo, q1, med, q3, hi):
            cx = self.px(x)
            ET.SubElement(g, "line", x1=f"{cx:.2f}", x2=f"{cx:.2f}", y1=f"{self.py(a):.2f}", y2=f"{self.py(f):.2f}")
            ET.SubElement(g, "rect", x=f"{cx - 2:.2f}", y=f"{self.py(e):.2f}", width="4",
                          height=f"{max(self.py(b) - self.py(e), 0.0):.2f}")

    def write(self, path: Path) -> Path:
        ET.ElementTree(self.svg).write(path, encoding="utf-8", xml_declaration=True)
        return path


def write_panels(summary: list[dict], epsilon: float, min_split: int, out: Path) -> list[Path]:
    xs = [r["increment"] for r in summary]
    col = lambda k: [r[k] for r in summary]
    paths = []

    mse, worst = col("mse_mean"), col("max_leaf_mse_mean")
    p = Panel("global MSE and max leaf MSE", xs, mse + worst + [epsilon], log_y=True)
    p.series("mse_mean", xs, mse, COLORS[0])
    p.series("max_leaf_mse_mean", xs, worst, COLORS[1])
    p.series("epsilon", [xs[0], xs[-1]], [epsilon, epsilon], COLORS[2], dashed=True)
    paths.append(p.write(out / "mse.svg"))

    lo, hi = col("leaf_count_min"), col("leaf_count_max")
    p = Panel("leaf count", xs, lo + hi)
    p.boxes(xs, lo, col("leaf_count_q1"), col("leaf_count_med"), col("leaf_count_q3"), hi, "#777777")
    p.series("leaf_count_med", xs, col("leaf_count_med"), COLORS[0])
    paths.append(p.write(out / "leaves.svg"))

    depth = col("depth")
    p = Panel("maximum depth", xs, depth)
    p.series("depth", xs, depth, COLORS[0])
    paths.append(p.write(out / "depth.svg"))

    size = col("maxmse_cell_size")
    p = Panel("size of the max-MSE leaf", xs, size + [min_split])
    p.series("maxmse_cell_size", xs, size, COLORS[0])
    p.series("min_split", [xs[0], xs[-1]], [min_split, min_split], COLORS[3], dashed=True)
    paths.append(p.write(out / "cellsize.svg"))
    return paths
