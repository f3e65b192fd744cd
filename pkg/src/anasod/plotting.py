"""SVG plots of incumbent curves: by query count and by simulated cost."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidInputError  # noqa: E402
from .harness import aggregate, load_run_dir  # noqa: E402


def plot_runs(in_dir: str | Path, out_path: str | Path) -> Path:
    """Two panels, mean incumbent with a one-standard-error band per strategy.

    The SVG carries no date and a fixed hash salt, so identical inputs give
    identical files.
    """
    runs = load_run_dir(in_dir)
    if not runs:
        raise InvalidInputError(f"no trial CSVs found under {in_dir}")
    with plt.rc_context({"svg.hashsalt": "anasod", "svg.fonttype": "none"}):
        fig, (ax_q, ax_c) = plt.subplots(1, 2, figsize=(10, 4))
        for label, series in runs.items():
            s = aggregate(series)
            steps = range(1, s.incumbent_mean.size + 1)
            (line,) = ax_q.plot(steps, s.incumbent_mean, label=f"{label} (n={s.n_trials})")
            ax_q.fill_between(steps, s.incumbent_mean - s.incumbent_se, s.incumbent_mean + s.incumbent_se,
                              color=line.get_color(), alpha=0.2, linewidth=0)
            ax_c.plot(s.cost_grid, s.cost_mean, color=line.get_color(), label=label)
            ax_c.fill_between(s.cost_grid, s.cost_mean - s.cost_se, s.cost_mean + s.cost_se,
                              color=line.get_color(), alpha=0.2, linewidth=0)
        ax_q.set_xlabel("queries")
        ax_c.set_xlabel("simulated GPU-seconds")
        ax_c.set_xscale("log")
        for ax in (ax_q, ax_c):
            ax.set_ylabel("best validation error (%)")
            ax.grid(alpha=0.3)
        ax_q.legend()
        fig.tight_layout()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path
