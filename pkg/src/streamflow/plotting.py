"""SVG figures for marginal reports, loss curves, chunk sweeps and latency.

Output is byte-stable for identical inputs: the SVG id salt is fixed and no
date is written into the document metadata.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from streamflow.evaluation import LatencyReport, MarginalReport, SweepRow, sign_mode  # noqa: E402

STYLES = ("marginals", "loss", "sweep", "latency")
MAX_SAMPLE_PATHS = 40
_RC = {"svg.hashsalt": "streamflow", "svg.fonttype": "path", "font.size": 9}
_BAND_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


@dataclass
class Band:
    """Quantile envelope of one group of reference paths on the report grid."""

    label: int
    lo: np.ndarray
    hi: np.ndarray
    centroid: np.ndarray
    count: int


def marginal_bands(report: MarginalReport, dim: int = 0, quantiles=(0.1, 0.9)) -> list[Band]:
    """Group reference paths by the sign of their endpoint; one band per group.

    Falls back to the sampled paths when the report carries no reference.
    """
    paths = report.reference if report.reference is not None else report.samples
    if paths is None or len(paths) == 0:
        raise ValueError("report has no paths to build bands from")
    labels = np.array([sign_mode(p[:, dim : dim + 1]) for p in paths])
    bands = []
    for lab in np.unique(labels):
        grp = paths[labels == lab, :, dim]
        lo, hi = np.quantile(grp, quantiles, axis=0)
        bands.append(Band(int(lab), lo, hi, grp.mean(axis=0), int(grp.shape[0])))
    return bands


def _svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def _marginals(report: MarginalReport, ax) -> None:
    t = report.grid
    ref_t = t if report.reference is None or report.reference.shape[1] == len(t) else np.linspace(0, 1, report.reference.shape[1])
    for j, band in enumerate(marginal_bands(report)):
        poly = ax.fill_between(ref_t, band.lo, band.hi, color=_BAND_COLORS[j % len(_BAND_COLORS)], alpha=0.3, lw=0)
        poly.set_gid(f"band-{j}")
    if report.samples is not None:
        s = report.samples
        st = np.linspace(0.0, 1.0, s.shape[1])
        for i in range(min(len(s), MAX_SAMPLE_PATHS)):
            (line,) = ax.plot(st, s[i, :, 0], color="k", lw=0.6, alpha=0.6)
            line.set_gid(f"sample-path-{i}")
    ax.set_xlabel("t")
    ax.set_ylabel("action")
    ax.set_title(f"mean W1 {report.mean_w1:.4f}, max W1 {report.max_w1:.4f}")


def _loss(curve, ax) -> None:
    curve = np.asarray(curve, dtype=np.float64)
    ax.plot(np.arange(len(curve)), curve, lw=0.8)
    if np.all(curve > 0):
        ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")


def _sweep(rows: Sequence[SweepRow], ax) -> None:
    sizes = [r.chunk_size for r in rows]
    ax.plot(range(len(rows)), [r.relative for r in rows], marker="o")
    ax.set_xticks(range(len(rows)), [str(s) for s in sizes])
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.set_xlabel("chunk size (actions)")
    ax.set_ylabel("score relative to best")


def _latency(rep: LatencyReport, ax) -> None:
    names = ["time to first action", "per action"]
    s = [rep.stream_ttfa_ns / 1e6, rep.stream_per_action_ns / 1e6]
    b = [rep.baseline_ttfa_ns / 1e6, rep.baseline_per_action_ns / 1e6]
    x = np.arange(2)
    ax.bar(x - 0.2, s, 0.4, label="streaming")
    ax.bar(x + 0.2, b, 0.4, label="trajectory baseline")
    ax.set_xticks(x, names)
    ax.set_ylabel("ms")
    ax.legend()


def infer_style(report) -> str:
    if isinstance(report, MarginalReport):
        return "marginals"
    if isinstance(report, LatencyReport):
        return "latency"
    if isinstance(report, (list, tuple)) and report and isinstance(report[0], SweepRow):
        return "sweep"
    return "loss"


def render_figure(report, style: str | None = None) -> str:
    """Render ``report`` as a standalone SVG document string."""
    style = infer_style(report) if style is None else style
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose from {STYLES}")
    if style == "marginals":
        if not isinstance(report, MarginalReport) or report.w1.size == 0:
            raise ValueError("marginals style needs a non-empty MarginalReport")
    elif style == "latency":
        if not isinstance(report, LatencyReport):
            raise ValueError("latency style needs a LatencyReport")
    elif report is None or len(report) == 0:
        raise ValueError("empty report")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        {"marginals": _marginals, "loss": _loss, "sweep": _sweep, "latency": _latency}[style](report, ax)
        fig.tight_layout()
        return _svg(fig)


def write_figure(report, path, style: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_figure(report, style))
