"""SVG line plots of the error norms.

Axis limits are set explicitly (data range plus a 5% margin) and written into
the SVG's Description metadata as JSON so tests can check them without
parsing path data.
"""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MARGIN = 0.05
PANELS = (
    ("norm_e", r"$\|e\|$"),
    ("norm_xtilde", r"$\|\tilde{x}\|$"),
    ("norm_xtildedot", r"$\|\dot{\tilde{x}}\|$"),
)


def padded_limits(values, margin: float = MARGIN) -> tuple[float, float]:
    """``[min, max]`` widened by ``margin`` of the span on each side (unit span if flat)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    if span == 0.0:
        span = max(abs(lo), 1.0)
    return lo - margin * span, hi + margin * span


def plot_norms(telemetry, path, title: str = "", disturbance_marks: bool = True) -> dict:
    """Write the three-panel norm plot to ``path``; returns the axis limits used."""
    t = np.array([r.t for r in telemetry], dtype=float)
    limits: dict = {"t": list(padded_limits(t))}
    with plt.rc_context({"svg.hashsalt": "shapeservo", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(len(PANELS), 1, sharex=True, figsize=(6.4, 6.0))
        for ax, (key, label) in zip(axes, PANELS):
            y = np.array([getattr(r, key) for r in telemetry], dtype=float)
            ax.plot(t, y, lw=1.2, color="C0")
            ylim = padded_limits(y)
            ax.set_ylim(*ylim)
            ax.set_ylabel(label)
            ax.grid(alpha=0.3, lw=0.5)
            limits[key] = list(ylim)
            if disturbance_marks and len(t):
                mask = np.array([r.disturbance for r in telemetry]) != 0
                if mask.any():
                    ax.fill_between(t, ylim[0], ylim[1], where=mask, color="C3", alpha=0.15, lw=0)
        axes[-1].set_xlim(*limits["t"])
        axes[-1].set_xlabel("t (s)")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg",
                    metadata={"Date": None, "Description": json.dumps({"limits": limits}, sort_keys=True)})
        plt.close(fig)
    return limits


def read_plot_limits(path) -> dict:
    """Recover the limits stored by :func:`plot_norms` from an SVG file."""
    import xml.etree.ElementTree as ET

    ns = {"dc": "http://purl.org/dc/elements/1.1/"}
    root = ET.parse(path).getroot()
    node = root.find(".//dc:description", ns)
    if node is None or node.text is None:
        raise ValueError(f"{path} has no description metadata")
    return json.loads(node.text)["limits"]
