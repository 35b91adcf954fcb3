"""
Static SVG figures rendered from Jinja2 templates. Coordinates are printed
with a fixed number of decimals and nothing time-dependent is embedded.
"""

from pathlib import Path

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from ucf.utils import atomic_write_text

SIZE = 600
MARGIN = 40
POSITIVE_COLOR = "#d62728"
NEGATIVE_COLOR = "#1f77b4"
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]

_env = Environment(
    loader=FileSystemLoader(Path(__file__).parent / "templates"),
    autoescape=True,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def _to_canvas(coords: np.ndarray) -> np.ndarray:
    lo = coords.min(axis=0)
    span = coords.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    inner = SIZE - 2 * MARGIN
    unit = (coords - lo) / span
    # SVG y grows downwards
    return np.column_stack([MARGIN + unit[:, 0] * inner, SIZE - MARGIN - unit[:, 1] * inner])


def scatter_svg(coords, labels, title: str = "t-SNE projection") -> str:
    """Two-class scatter; labels are +1 / -1."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    canvas = _to_canvas(coords) if coords.size else np.zeros((0, 2))
    classes = []
    for name, label, color in (("positive", 1, POSITIVE_COLOR), ("negative", -1, NEGATIVE_COLOR)):
        rows = canvas[labels == label]
        classes.append(
            {"name": name, "color": color, "points": [(_fmt(x), _fmt(y)) for x, y in rows]}
        )
    return _env.get_template("scatter.svg.j2").render(
        size=SIZE, margin=MARGIN, radius=2.5, title=title, classes=classes
    )


def roc_svg(curves, title: str = "ROC on frozen-encoder embeddings") -> str:
    """
    Args:
        curves: sequence of (name, fpr, tpr, auc).
    """
    inner = SIZE - 2 * MARGIN
    rendered = []
    for i, (name, fpr, tpr, auc) in enumerate(curves):
        xs = MARGIN + np.asarray(fpr) * inner
        ys = SIZE - MARGIN - np.asarray(tpr) * inner
        rendered.append(
            {
                "name": name,
                "color": PALETTE[i % len(PALETTE)],
                "auc": f"{auc:.4f}",
                "points": " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys)),
            }
        )
    return _env.get_template("roc.svg.j2").render(size=SIZE, margin=MARGIN, title=title, curves=rendered)


def write_svg(path, svg: str) -> None:
    atomic_write_text(path, svg)
