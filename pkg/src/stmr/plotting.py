"""Plot data: gnuplot blocks and SVG convergence plots, solution heightfields."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np

from .experiments import format_value


def _curves(rows):
    curves = defaultdict(list)
    for r in rows:
        if np.isfinite(r.relative_error):
            curves[r.epsilon].append((r.dim_X, r.relative_error))
    return {eps: sorted(pts) for eps, pts in sorted(curves.items(), reverse=True)}


def emit_plot(rows, stem, style: str = "loglog", svg: bool = True) -> list[Path]:
    """Write ``stem.dat`` (one gnuplot block per epsilon) and ``stem.svg``
    (dim X vs relative error with a slope -1/2 guide)."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to plot")
    if style != "loglog":
        raise ValueError(f"unsupported plot style {style!r}")
    curves = _curves(rows)
    stem = Path(stem)
    dat = stem.with_suffix(".dat")
    with open(dat, "w", encoding="utf-8") as fh:
        fh.write("# dim_X relative_error\n")
        blocks = []
        for eps, pts in curves.items():
            lines = [f"# epsilon = {format_value(eps)}"]
            lines += [f"{d} {format_value(e)}" for d, e in pts]
            blocks.append("\n".join(lines) + "\n")
        fh.write("\n\n".join(blocks))
    out = [dat]
    if svg and curves:
        out.append(_svg(curves, stem.with_suffix(".svg"), title=_title(rows)))
    return out


def _title(rows):
    r = rows[0]
    return f"{r.preset}, option ({r.option})"


def _svg(curves, path, title=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for eps, pts in curves.items():
        d, e = np.array(pts, dtype=float).T
        ax.loglog(d, e, "o-", ms=3, label=f"eps = {eps:g}")
    # slope guide anchored at the first point of the first curve
    d0, e0 = next(iter(curves.values()))[0]
    dmax = max(p[-1][0] for p in curves.values())
    xs = np.array([d0, max(dmax, d0 * 4)], dtype=float)
    ax.loglog(xs, e0 * (xs / d0) ** -0.5, "k--", lw=0.8, label="slope -1/2")
    ax.set_xlabel("dim X")
    ax.set_ylabel("relative estimated error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def heightfield(X, coeffs, path, n_samples: int = 129) -> np.ndarray:
    """Sample a trial function on an n_samples^2 grid and write t,x,u rows."""
    s = np.linspace(0.0, 1.0, n_samples)
    U = X.evaluate_grid(coeffs, s, s)
    T, Xg = np.meshgrid(s, s, indexing="ij")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,x,u\n")
        for t, x, u in zip(T.ravel(), Xg.ravel(), U.ravel()):
            fh.write(f"{format_value(t)},{format_value(x)},{format_value(u)}\n")
    return U
