"""Figure rendering for the report command (headless Agg backend).

Each function draws one figure from plain record dicts (the same rows the
pipeline writes as line-delimited output) and saves it to a file, so a
report can be regenerated from artifacts alone.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_MODE_STYLE = {
    "lift_adapt": {"color": "tab:blue", "marker": "o", "label": "adaptation (lift)"},
    "icl_full_forward": {"color": "tab:orange", "marker": "s",
                         "label": "full-attention forward (icl)"},
}


def plot_timing(timing_records: list[dict], fit_records: list[dict],
                out_path) -> str:
    """Log-log wall time vs input length with fitted curves.

    OOM markers are drawn as red crosses at the top of the axis; the
    fitted crossover length, when present, is a vertical dashed line.
    """
    fig, ax = plt.subplots(figsize=(7, 5))
    by_mode: dict[str, list[dict]] = {}
    ooms = []
    for r in timing_records:
        if r.get("record", "timing") != "timing":
            continue
        if r.get("oom"):
            ooms.append(r)
        else:
            by_mode.setdefault(r["mode"], []).append(r)

    top = 0.0
    for mode, rows in sorted(by_mode.items()):
        style = _MODE_STYLE.get(mode, {"color": "gray", "marker": "x", "label": mode})
        L = np.array([row["input_length"] for row in rows], dtype=float)
        t = np.array([row["wall_time"] for row in rows], dtype=float)
        order = np.argsort(L)
        ax.plot(L[order], t[order], linestyle="none", marker=style["marker"],
                color=style["color"], label=style["label"])
        top = max(top, float(t.max()))

    crossover = None
    for fr in fit_records:
        if fr.get("record") == "crossover":
            crossover = fr.get("crossover_length")
        if fr.get("record") != "fit":
            continue
        mode = fr["mode"]
        style = _MODE_STYLE.get(mode, {"color": "gray"})
        rows = by_mode.get(mode)
        if not rows:
            continue
        L = np.array(sorted(row["input_length"] for row in rows), dtype=float)
        grid = np.geomspace(L.min(), L.max(), 128)
        if mode == "icl_full_forward":
            a, b, c = fr["quad_coeffs"]
            fitted = a + b * grid + c * grid ** 2
            tag = "quadratic fit"
        else:
            a, b = fr["linear_coeffs"]
            fitted = a + b * grid
            tag = "linear fit"
        pos = fitted > 0
        ax.plot(grid[pos], fitted[pos], color=style["color"], alpha=0.6,
                linewidth=1.2, label=f"{tag} (loglog slope {fr['loglog_slope']:.2f})")

    for r in ooms:
        ax.plot([r["input_length"]], [top if top > 0 else 1.0], marker="x",
                markersize=12, color="red", linestyle="none")
    if ooms:
        ax.plot([], [], marker="x", color="red", linestyle="none",
                label="out of memory")
    if crossover is not None:
        ax.axvline(crossover, color="black", linestyle="--", linewidth=1,
                   label=f"fitted crossover L={crossover:,.0f}")

    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("input length (tokens)")
    ax.set_ylabel("wall time (s)")
    ax.set_title("Adaptation vs full-attention cost")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def plot_training(epoch_records: list[dict], out_path) -> str:
    """Per-epoch input and auxiliary losses from a training report."""
    rows = [r for r in epoch_records if r.get("record") == "epoch"]
    fig, ax = plt.subplots(figsize=(6, 4))
    if rows:
        epochs = [r["epoch"] for r in rows]
        ax.plot(epochs, [r["input_loss"] for r in rows], marker="o",
                label="input loss")
        if any(r.get("at_loss") is not None for r in rows):
            ax.plot(epochs, [r.get("at_loss") for r in rows], marker="s",
                    label="auxiliary loss")
        ax.set_xticks(epochs)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean NLL per token")
    ax.set_title("Adaptation loss by epoch")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def plot_eval(summaries: list[dict], out_path) -> str:
    """Grouped bars: exact match overall / middle-third / edge per mode."""
    rows = [r for r in summaries if r.get("record") == "summary" and "mode" in r]
    fig, ax = plt.subplots(figsize=(max(6, 1.3 * len(rows)), 4))
    if rows:
        x = np.arange(len(rows))
        width = 0.27
        for i, (key, label) in enumerate([
                ("exact_match", "overall"),
                ("exact_match_middle", "middle third"),
                ("exact_match_edge", "edges")]):
            vals = [r.get(key) if r.get(key) is not None else 0.0 for r in rows]
            ax.bar(x + (i - 1) * width, vals, width, label=label)
        ax.set_xticks(x)
        ax.set_xticklabels([r["mode"] for r in rows], rotation=20, ha="right",
                           fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("exact match")
    ax.set_title("Fact recall by evaluation mode")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
