"""Dual-wideband THz MIMO channel model.

Generates random multipath channels over uniform linear arrays where the
propagation delay across the apertures (beam squint) plus the per-path
gross delay is quantized to sampling instants, and per-path gains are
scaled by distance pathloss and molecular absorption.

Index conventions used throughout the package
---------------------------------------------
Antennas are 1-based in the public API (``m`` = RX, ``n`` = TX).  The flat
block ordering for an (m, n, path) triple is ``((m-1)*N + (n-1))*L_p + l``
with the path index ``l`` running fastest.  The effective channel matrix
``H`` is M x (M*N*L_p): row m is zero outside column block m, and inside
the block carries the per-(n, path) complex gains.  The delay-selector
vector ``e`` stacks one length-K one-hot segment per (m, n, path) block in
the same ordering; the one-hot position is the 0-based delay index.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, SystemConfig

__all__ = [
    "PathParams",
    "ChannelRealization",
    "DelaySelector",
    "molecular_absorption",
    "path_gain_std",
    "steering_coeff",
    "aperture_delay",
    "aliasing_budget",
    "delay_index",
    "realize_channel",
    "impulse_response",
    "block_rows",
    "embed_block_rows",
    "enforce_block_pattern",
]

C_LIGHT = 299792458.0


@dataclass(frozen=True)
class PathParams:
    """Parameters of one resolvable propagation path."""

    alpha_bar: complex          # complex gain including the carrier phase
    theta_rx_phys: float        # physical angle of arrival [rad]
    theta_tx_phys: float        # physical angle of departure [rad]
    theta_rx: float             # normalized AoA, cos(theta_rx_phys)/2
    theta_tx: float             # normalized AoD, cos(theta_tx_phys)/2
    tau_path: float             # gross path delay [s]


@dataclass(frozen=True)
class DelaySelector:
    """One-hot-per-block delay vector and its lifted training-frame form."""

    e: np.ndarray               # binary, length n_blocks*K
    K: int
    n_blocks: int

    def lifted(self, T: int) -> np.ndarray:
        """Block-diagonal lift: I_T kron e, shape (T*len(e), T)."""
        return np.kron(np.eye(T), self.e.reshape(-1, 1))


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the structured dual-wideband channel."""

    cfg: SystemConfig
    paths: list                 # L_p PathParams
    H: np.ndarray               # M x (M*N*L_p), block-diagonal pattern
    e: np.ndarray               # binary delay selector, length M*N*L_p*K
    kappa_idx: np.ndarray       # int delay index, shape (M, N, L_p)
    Z: np.ndarray               # beamspace block, (M*N*L_p) x (N*N*L_p)

    @property
    def selector(self) -> DelaySelector:
        return DelaySelector(self.e, self.cfg.K, self.cfg.n_blocks)


def molecular_absorption(f_c: float, kappa_abs: float) -> float:
    """Amplitude loss factor exp(-kappa/2) from molecular absorption.

    ``f_c`` is accepted for interface symmetry with table lookups; the
    coefficient itself is supplied by the caller (or a loaded table).
    """
    if kappa_abs < 0:
        raise ConfigError("absorption coefficient must be non-negative")
    return math.exp(-0.5 * kappa_abs)


def path_gain_std(cfg: SystemConfig, ell: int) -> float:
    """Standard deviation of the gain of path ``ell`` (1-based).

    The variance is sqrt(N*M/L_p) * d^(-xi_ell) * exp(-kappa/2), with the
    LoS exponent for ell=1 and the nLoS exponent otherwise.
    """
    if not 1 <= ell <= cfg.L_p:
        raise IndexError(f"path index {ell} outside 1..{cfg.L_p}")
    if cfg.d_tx_rx <= 0:
        raise ConfigError("d_tx_rx must be positive")
    xi = cfg.xi[ell - 1]
    var = (
        math.sqrt(cfg.N * cfg.M / cfg.L_p)
        * cfg.d_tx_rx ** (-xi)
        * molecular_absorption(cfg.f_c, cfg.kappa_abs)
    )
    return math.sqrt(var)


def steering_coeff(m: int, n: int, path: PathParams) -> complex:
    """Unit-modulus array phase for RX element m and TX element n."""
    return np.exp(-2j * np.pi * (m - 1) * path.theta_rx) * np.exp(
        2j * np.pi * (n - 1) * path.theta_tx
    )


def aperture_delay(m: int, n: int, path: PathParams, f_c: float) -> float:
    """Combined TX/RX aperture propagation delay [s] for element pair (m, n)."""
    return (m - 1) * math.cos(path.theta_rx_phys) / (2 * f_c) - (
        n - 1
    ) * math.cos(path.theta_tx_phys) / (2 * f_c)


def aliasing_budget(cfg: SystemConfig) -> tuple[int, bool]:
    """Antenna budget free of inter-sample aperture delay.

    Returns ``(bound, ok)`` with bound = ceil(2*f_c*T_s + 2).  A violated
    budget is advisory: a warning is emitted, not an error, since realistic
    extremely-large arrays exceed it by design.
    """
    bound = math.ceil(2 * cfg.f_c * cfg.T_s + 2)
    ok = cfg.M + cfg.N <= bound
    if not ok:
        warnings.warn(
            f"M+N={cfg.M + cfg.N} exceeds the aliasing budget {bound}; "
            "aperture delays span multiple sampling periods",
            UserWarning,
            stacklevel=2,
        )
    return bound, ok


def delay_index(tau_total: float, cfg: SystemConfig) -> int:
    """Nearest-sample delay index, clamped to [0, K]."""
    if tau_total < 0:
        warnings.warn(
            f"negative total delay {tau_total:.3e}s clamped to 0",
            UserWarning,
            stacklevel=2,
        )
        return 0
    kappa = int(round(tau_total / cfg.T_s))
    if kappa > cfg.K:
        warnings.warn(
            f"delay index {kappa} clamped to K={cfg.K}",
            UserWarning,
            stacklevel=2,
        )
        return cfg.K
    return kappa


def _kappa_grid(cfg: SystemConfig, th_rx_phys, th_tx_phys, tau_path) -> np.ndarray:
    """Quantized total-delay indices over the antenna grid, before the
    saturation handling (values may equal K)."""
    m_idx = np.arange(cfg.M)[:, None]
    n_idx = np.arange(cfg.N)[None, :]
    tau_total = (
        tau_path
        + m_idx * math.cos(th_rx_phys) / (2 * cfg.f_c)
        - n_idx * math.cos(th_tx_phys) / (2 * cfg.f_c)
    )
    return np.clip(np.round(tau_total / cfg.T_s).astype(int), 0, cfg.K), np.any(
        tau_total < 0
    )


def realize_channel(cfg: SystemConfig, rng: np.random.Generator) -> ChannelRealization:
    """Draw one channel realization.

    Angles are uniform on [-pi/2, pi/2]; gains are zero-mean circularly
    symmetric Gaussian with the per-path variance of :func:`path_gain_std`,
    rotated by the carrier phase of the TX-RX distance.  Gross nLoS delays
    are uniform on
    [0, (K/2)*T_s], redrawn (a bounded number of times) when a path would
    quantize onto another path's tap at some antenna pair, so that the
    declared paths stay mutually resolvable.  Deterministic under a fixed
    generator state.
    """
    from .beamspace import channel_to_beamspace

    M, N, L_p, K = cfg.M, cfg.N, cfg.L_p, cfg.K
    carrier_phase = np.exp(-2j * np.pi * cfg.d_tx_rx / cfg.lambda_c)

    paths = []
    kappa_grids = []
    any_negative = False
    unresolved = 0
    for ell in range(1, L_p + 1):
        th_rx = float(rng.uniform(-np.pi / 2, np.pi / 2))
        th_tx = float(rng.uniform(-np.pi / 2, np.pi / 2))
        # circularly-symmetric gain: each path carries its own phase
        std = path_gain_std(cfg, ell)
        alpha = (rng.normal(0.0, std) + 1j * rng.normal(0.0, std)) / np.sqrt(2.0)
        if ell == 1:
            tau = 0.0
            kappa, neg = _kappa_grid(cfg, th_rx, th_tx, tau)
        else:
            for attempt in range(200):
                tau = float(rng.uniform(0.0, 0.5 * K * cfg.T_s))
                kappa, neg = _kappa_grid(cfg, th_rx, th_tx, tau)
                if all(np.all(kappa != kg) for kg in kappa_grids):
                    break
            else:
                unresolved += 1
        any_negative = any_negative or neg
        kappa_grids.append(kappa)
        paths.append(
            PathParams(
                alpha_bar=complex(alpha * carrier_phase),
                theta_rx_phys=th_rx,
                theta_tx_phys=th_tx,
                theta_rx=float(math.cos(th_rx) / 2.0),
                theta_tx=float(math.cos(th_tx) / 2.0),
                tau_path=tau,
            )
        )

    if any_negative:
        warnings.warn(
            "negative total delays clamped to 0",
            UserWarning,
            stacklevel=2,
        )
    if unresolved:
        warnings.warn(
            f"{unresolved} paths still share taps with another path after "
            "resampling; realization kept",
            UserWarning,
            stacklevel=2,
        )

    # canonical path order: LoS first, then ascending gross delay, so that
    # blind estimators and the generator agree on path labels
    order = [0] + sorted(range(1, L_p), key=lambda i: paths[i].tau_path)
    paths = [paths[i] for i in order]
    kappa_grids = [kappa_grids[i] for i in order]

    # per-(m,n,l) gains via outer products of the array phase ramps
    m_idx = np.arange(M)[:, None, None]
    n_idx = np.arange(N)[None, :, None]
    th_rx_arr = np.array([p.theta_rx for p in paths])[None, None, :]
    th_tx_arr = np.array([p.theta_tx for p in paths])[None, None, :]
    alpha_arr = np.array([p.alpha_bar for p in paths])[None, None, :]
    h = alpha_arr * np.exp(-2j * np.pi * m_idx * th_rx_arr) * np.exp(
        2j * np.pi * n_idx * th_tx_arr
    )  # (M, N, L_p)

    H = embed_block_rows(h.reshape(M, N * L_p))

    kappa = np.stack(kappa_grids, axis=-1)      # (M, N, L_p)
    if np.any(kappa >= K):
        warnings.warn(
            f"{int((kappa >= K).sum())} delay indices saturate the budget; "
            f"placed at the last tap K-1={K - 1}",
            UserWarning,
            stacklevel=2,
        )
        kappa = np.minimum(kappa, K - 1)

    e = np.zeros((M * N * L_p, K))
    e[np.arange(M * N * L_p), kappa.reshape(-1)] = 1.0
    e = e.reshape(-1)

    Z = channel_to_beamspace(paths, M, N)
    return ChannelRealization(cfg=cfg, paths=paths, H=H, e=e, kappa_idx=kappa, Z=Z)


def impulse_response(
    paths: list, m: int, n: int, t_grid: np.ndarray, T_s: float, f_c: float
) -> np.ndarray:
    """Continuous-time diagnostic response over a grid of sample times.

    Evaluates the band-limited interpolation sum(alpha * phase * sinc(t - tau))
    with tau in sample units; used only for documentation plots, the
    estimation model quantizes delays to sample indices.
    """
    out = np.zeros(len(t_grid), dtype=complex)
    for ell, p in enumerate(paths, start=1):
        tau = (p.tau_path + aperture_delay(m, n, p, f_c)) / T_s
        out += p.alpha_bar * steering_coeff(m, n, p) * np.sinc(t_grid - tau)
    return out


# --- block-diagonal layout helpers -------------------------------------

def block_rows(H: np.ndarray, M: int) -> np.ndarray:
    """Extract the per-row diagonal blocks of H as an (M, N*L_p) array."""
    width = H.shape[1] // M
    idx = np.arange(M)
    return H.reshape(M, M, width)[idx, idx, :].copy()


def embed_block_rows(rows: np.ndarray) -> np.ndarray:
    """Place (M, N*L_p) block rows into the full M x (M*N*L_p) pattern."""
    M, width = rows.shape
    H = np.zeros((M, M, width), dtype=complex)
    H[np.arange(M), np.arange(M), :] = rows
    return H.reshape(M, M * width)


def enforce_block_pattern(H: np.ndarray, M: int) -> np.ndarray:
    """Zero out everything outside the per-row diagonal blocks."""
    return embed_block_rows(block_rows(H, M))
