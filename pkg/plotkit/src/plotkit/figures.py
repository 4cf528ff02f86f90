"""Figure construction and deterministic rendering.

Three figure kinds are supported, each consuming one of the experiment
CSV report formats:

``loglog-error``
    Convergence reports (``scheme,h,epsilon,...``, optionally with a
    leading ``problem`` column). One log-log series per scheme (or per
    problem/scheme pair) plus a dashed reference guide of configurable
    slope anchored at the smallest-h data point.

``trajectory-compare``
    Trajectory files (``t,y0[,y1,...]``) overlaid with a cycling line
    style so coinciding paths stay distinguishable.

``stability-multi``
    Mean-square traces (``t,mean_sq,...``) on a semilog-y axis, one
    series per input file.

All inputs are read and validated before anything is written, so a
failed render never leaves a file behind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "plotkit"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .csvio import Table, read_table, require_columns, require_rows
from .errors import PlotkitError, SchemaError

KINDS = ("loglog-error", "trajectory-compare", "stability-multi")

_LINESTYLES = ("-", "--", "-.", ":")

# Strip the volatile metadata each format embeds by default so that
# re-rendering the same spec produces byte-identical output.
_METADATA = {
    ".png": {"Software": None},
    ".svg": {"Date": None},
    ".pdf": {"CreationDate": None},
}


@dataclass(frozen=True)
class FigureSpec:
    """Everything needed to render one figure."""

    inputs: tuple[str, ...]
    kind: str
    out: str
    slope: float = 0.5
    title: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PlotkitError(
                f"unknown figure kind '{self.kind}' (choose from: {', '.join(KINDS)})"
            )
        if not self.inputs:
            raise PlotkitError("no input files given")


def _y_columns(table: Table) -> list[str]:
    cols = [c for c in table.columns if c != "t" and c.startswith("y")]
    if not cols:
        raise SchemaError(
            f"{table.path}: missing column 'y0' "
            "(a trajectory-compare input needs: t, y0[, y1, ...])"
        )
    return cols


def _load(spec: FigureSpec) -> list[Table]:
    tables = []
    for name in spec.inputs:
        table = read_table(name)
        if spec.kind == "loglog-error":
            require_columns(table, ("scheme", "h", "epsilon"), spec.kind)
        elif spec.kind == "trajectory-compare":
            require_columns(table, ("t",), spec.kind)
            _y_columns(table)
        else:
            require_columns(table, ("t", "mean_sq"), spec.kind)
        require_rows(table)
        tables.append(table)
    return tables


def _plot_loglog(ax, tables: list[Table], slope: float) -> None:
    anchor: tuple[float, float] | None = None
    h_max = -math.inf
    for table in tables:
        schemes = table.column("scheme")
        problems = table.column("problem") if "problem" in table.columns else None
        h = table.floats("h")
        eps = table.floats("epsilon")
        series: dict[str, list[tuple[float, float]]] = {}
        for i in range(len(schemes)):
            if eps[i] <= 0.0:
                continue  # blow-ups and self-comparisons have no place on a log axis
            label = schemes[i] if problems is None else f"{problems[i]}/{schemes[i]}"
            series.setdefault(label, []).append((float(h[i]), float(eps[i])))
        for label, points in series.items():
            points.sort()
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            ax.loglog(xs, ys, marker="o", linestyle="-", label=label)
            h_max = max(h_max, xs[-1])
            lo = (xs[0], ys[0])
            if anchor is None or lo[0] < anchor[0] or (lo[0] == anchor[0] and lo[1] < anchor[1]):
                anchor = lo
    if anchor is None:
        raise PlotkitError("no positive epsilon values to plot")
    h0, e0 = anchor
    guide_h = [h0, h_max]
    guide_e = [e0, e0 * (h_max / h0) ** slope]
    ax.loglog(guide_h, guide_e, linestyle="--", color="0.4", label=f"slope {slope:g}")
    ax.set_xlabel("h")
    ax.set_ylabel("epsilon")


def _plot_trajectories(ax, tables: list[Table]) -> None:
    for idx, table in enumerate(tables):
        style = _LINESTYLES[idx % len(_LINESTYLES)]
        t = table.floats("t")
        cols = _y_columns(table)
        for col in cols:
            label = table.path.stem if len(cols) == 1 else f"{table.path.stem}:{col}"
            ax.plot(t, table.floats(col), linestyle=style, label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("y")


def _plot_traces(ax, tables: list[Table]) -> None:
    plotted = False
    for idx, table in enumerate(tables):
        style = _LINESTYLES[idx % len(_LINESTYLES)]
        t = table.floats("t")
        m = table.floats("mean_sq")
        keep = m > 0.0
        if not keep.any():
            continue
        ax.semilogy(t[keep], m[keep], linestyle=style, label=table.path.stem)
        plotted = True
    if not plotted:
        raise PlotkitError("no positive mean_sq values to plot")
    ax.set_xlabel("t")
    ax.set_ylabel("mean-square")


def build_figure(spec: FigureSpec):
    """Validate all inputs and build the figure without writing anything."""
    tables = _load(spec)
    fig, ax = plt.subplots(figsize=(6.4, 4.8), dpi=100)
    try:
        if spec.kind == "loglog-error":
            _plot_loglog(ax, tables, spec.slope)
        elif spec.kind == "trajectory-compare":
            _plot_trajectories(ax, tables)
        else:
            _plot_traces(ax, tables)
        if spec.title:
            ax.set_title(spec.title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
    except Exception:
        plt.close(fig)
        raise
    return fig


def render(spec: FigureSpec) -> Path:
    """Render ``spec`` to ``spec.out``; on any failure no file is written."""
    fig = build_figure(spec)
    out = Path(spec.out)
    try:
        meta = _METADATA.get(out.suffix.lower())
        kwargs = {"metadata": meta} if meta is not None else {}
        fig.savefig(out, **kwargs)
    finally:
        plt.close(fig)
    return out
