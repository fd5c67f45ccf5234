"""Optional figure of measured against predicted battery rates (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path
from typing import Optional


def plot_battery(report, path) -> Optional[Path]:
    """Bar chart of the battery; returns ``None`` when matplotlib is missing."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    rows = [r for r in report.battery if r.measured_rate is not None]
    if not rows:
        return None
    ids = [r.estimate_id for r in rows]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    xs = range(len(rows))
    ax.bar([x - 0.2 for x in xs], [r.predicted_rate for r in rows], width=0.4, label="predicted")
    ax.bar([x + 0.2 for x in xs], [r.measured_rate for r in rows], width=0.4, label="measured")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(ids, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("decay rate")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
