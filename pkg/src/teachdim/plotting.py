"""Render report series to PNG files (headless backend)."""

from __future__ import annotations

import re
from pathlib import Path
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)


def plot_series(series: Dict[tuple, dict], out_dir) -> List[Path]:
    """One figure per (experiment, level, rule): mean with 95% CI and the bound band."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for (exp, level, rule), info in series.items():
        p = info["parameter"]
        rows = info["rows"]
        x = [r[p] for r in rows]
        mean = [r["mean_steps"] for r in rows]
        lo = [r["ci95_low"] for r in rows]
        hi = [r["ci95_high"] for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.fill_between(x, [r["bound_lower"] for r in rows], [r["bound_upper"] for r in rows],
                        color="0.85", label="analytic bounds")
        ax.errorbar(x, mean, yerr=[[m - l for m, l in zip(mean, lo)], [h - m for m, h in zip(mean, hi)]],
                    marker="o", capsize=3, label="mean steps (95% CI)")
        ax.set_xlabel(p)
        ax.set_ylabel("teaching steps")
        ax.set_title(f"{exp}  level {level}  {rule}")
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = out / f"{_slug(exp)}_L{level}_{_slug(rule)}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
