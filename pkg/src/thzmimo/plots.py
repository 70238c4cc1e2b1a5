"""Figure rendering for the report commands.

Each renderer takes the already-computed rows and writes one PNG next to
the corresponding CSV; the delimited files remain the primary output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_sweep_figure",
    "render_convergence_figure",
    "render_delay_profile_figure",
    "render_beamspace_figure",
]

_STYLE = {
    "figure.figsize": (7.0, 5.0),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "axes.grid": True,
    "grid.alpha": 0.35,
    "lines.linewidth": 1.8,
    "lines.markersize": 6,
}

_MARKERS = {"proposed": "o", "idealized": "s", "ls": "^", "omp": "v"}
_XLABEL = {"snr_db": "SNR [dB]", "T": "training length T", "MN": "array size"}


def render_sweep_figure(agg_rows, scn, path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for method in scn.methods:
            pts = [r for r in agg_rows if r["method"] == method]
            xs = np.arange(len(pts))
            ys = [r["nmse_mean_db"] for r in pts]
            ax.plot(xs, ys, marker=_MARKERS.get(method, "x"), label=method)
        ax.set_xticks(np.arange(len(scn.values)))
        ax.set_xticklabels([str(v) for v in scn.values])
        ax.set_xlabel(_XLABEL.get(scn.kind, scn.kind))
        ax.set_ylabel("mean NMSE [dB]")
        ax.legend()
        fig.savefig(path)
        plt.close(fig)


def render_convergence_figure(rows, path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        snrs = sorted({r["snr_db"] for r in rows}, key=float)
        for snr in snrs:
            pts = [r for r in rows if r["snr_db"] == snr]
            its = [r["iteration"] for r in pts]
            errs = [10 * np.log10(max(r["nmse"], 1e-300)) for r in pts]
            (line,) = ax.plot(its, errs, label=f"proposed, {snr} dB")
            ideal = 10 * np.log10(max(pts[0]["nmse_idealized"], 1e-300))
            ax.axhline(ideal, color=line.get_color(), linestyle=":", alpha=0.7)
        ax.set_xlabel("iteration")
        ax.set_ylabel("NMSE [dB]")
        ax.legend(fontsize=8)
        fig.savefig(path)
        plt.close(fig)


def render_delay_profile_figure(profile_rows, delay_rows, path) -> None:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 7.5))
        ks = [r["k"] for r in profile_rows]
        es = [r["e"] for r in profile_rows]
        ax1.stem(ks, es, basefmt=" ")
        ax1.set_xlabel("delay index k")
        ax1.set_ylabel("combined profile")
        ax1.set_ylim(-0.05, 1.2)
        fs = [r["f_c_hz"] / 1e9 for r in delay_rows]
        ds = [r["delay_s"] * 1e12 for r in delay_rows]
        ax2.plot(fs, ds)
        ax2.set_xlabel("carrier frequency [GHz]")
        ax2.set_ylabel("aperture delay [ps]")
        fig.savefig(path)
        plt.close(fig)


def render_beamspace_figure(Z, path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        mag = np.abs(np.asarray(Z)) ** 2
        vmax = mag.max() if mag.size else 1.0
        im = ax.imshow(mag, aspect="auto", cmap="viridis", vmax=vmax)
        fig.colorbar(im, ax=ax, label="|Z|^2")
        ax.set_xlabel("beamspace column")
        ax.set_ylabel("beamspace row")
        fig.savefig(path)
        plt.close(fig)
