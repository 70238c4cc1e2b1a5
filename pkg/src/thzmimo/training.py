"""Training symbols, structured pilot matrices and received-signal synthesis.

Two synthesis routes are provided on purpose: a direct per-antenna
convolution (`synthesize_rx_direct`, the reference oracle) and the
structured product Y = H * Phi * E (`synthesize_rx_matrix`).  They must
agree to machine precision; the test suite enforces it.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, DelaySelector
from .config import SystemConfig

__all__ = [
    "TrainingSet",
    "RxBlock",
    "PilotMatrix",
    "MemoryBudgetError",
    "gen_training",
    "build_qvec",
    "build_phi",
    "synthesize_rx_direct",
    "synthesize_rx_matrix",
    "add_awgn",
    "dump_signals_csv",
]


class MemoryBudgetError(MemoryError):
    """Materializing a pilot matrix would exceed the configured cap."""


@dataclass
class TrainingSet:
    """Training symbols with a K-sample silent prefix.

    ``qbar`` has shape (N, T + K); column j holds the symbol at slot
    j - K + 1, so slots 1..T are stored after K leading zeros and any
    lookup at slot <= 0 resolves to zero.
    """

    cfg: SystemConfig
    qbar: np.ndarray
    phi: "PilotMatrix | None" = None

    def symbol(self, n: int, t: int) -> complex:
        """Symbol of TX antenna n (1-based) at slot t; zero for t <= 0."""
        if t <= 0:
            return 0.0 + 0.0j
        return self.qbar[n - 1, t + self.cfg.K - 1]

    def window_matrix(self) -> np.ndarray:
        """Delay windows Q[n, t-1, k] = qbar_n(t - k), shape (N, T, K)."""
        cfg = self.cfg
        Q = np.empty((cfg.N, cfg.T, cfg.K), dtype=complex)
        for k in range(cfg.K):
            Q[:, :, k] = self.qbar[:, cfg.K - k : cfg.K - k + cfg.T]
        return Q


@dataclass
class RxBlock:
    """Received baseband training samples and the noise variance used."""

    Y: np.ndarray               # M x T
    sigma_n2: float


def gen_training(cfg: SystemConfig, rng: np.random.Generator) -> TrainingSet:
    """Draw i.i.d. unit-variance circularly-symmetric training symbols."""
    body = (
        rng.standard_normal((cfg.N, cfg.T))
        + 1j * rng.standard_normal((cfg.N, cfg.T))
    ) / np.sqrt(2.0)
    qbar = np.concatenate([np.zeros((cfg.N, cfg.K), dtype=complex), body], axis=1)
    return TrainingSet(cfg=cfg, qbar=qbar)


def build_qvec(ts: TrainingSet, n: int, t: int, i: int = 0) -> np.ndarray:
    """Length-K delay window [q_n(t-i), q_n(t-i-1), ..., q_n(t-i-K+1)].

    ``i`` is the tap offset; the quantized model collapses the tap sum so
    the pilot matrix uses i = 0, while i >= 1 exposes the tap-indexed view.
    """
    cfg = ts.cfg
    if not 1 <= n <= cfg.N:
        raise IndexError(f"TX index {n} outside 1..{cfg.N}")
    if not 1 <= t <= cfg.T:
        raise IndexError(f"slot {t} outside 1..{cfg.T}")
    if not 0 <= i <= cfg.L_t:
        raise IndexError(f"tap offset {i} outside 0..{cfg.L_t}")
    return np.array([ts.symbol(n, t - i - k) for k in range(cfg.K)])


@dataclass
class PilotMatrix:
    """Kronecker-structured pilot matrix, dense or applied lazily.

    The dense form has shape (M*N*L_p) x (M*N*L_p*K*T); slot t occupies
    columns [t-1]*M*N*L_p*K onward and equals I_M kron blkdiag over n of
    (I_{L_p} kron q_n(t)^T).  All consumers only need products against
    lifted delay vectors, which the operator form provides at
    O(M*N*L_p*K*T) cost.
    """

    cfg: SystemConfig
    Q: np.ndarray               # (N, T, K) delay windows
    dense: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        cfg = self.cfg
        return (cfg.n_blocks, cfg.n_blocks * cfg.K * cfg.T)

    def apply_to_e(self, e: np.ndarray) -> np.ndarray:
        """Compute Phi @ (I_T kron e) without lifting, shape (M*N*L_p, T)."""
        cfg = self.cfg
        e4 = np.asarray(e, dtype=complex).reshape(cfg.M, cfg.N, cfg.L_p, cfg.K)
        G = np.einsum("ntk,mnlk->mnlt", self.Q, e4)
        return G.reshape(cfg.n_blocks, cfg.T)

    def materialize(self) -> np.ndarray:
        if self.dense is None:
            raise MemoryBudgetError(
                f"pilot matrix of shape {self.shape} exceeds the dense cap; "
                "use the operator form (apply_to_e)"
            )
        return self.dense


def build_phi(
    ts: TrainingSet, cfg: SystemConfig, materialize: bool | None = None
) -> PilotMatrix:
    """Build the pilot matrix for a training set.

    ``materialize=None`` densifies only when the entry count fits the
    configured cap; ``True`` forces densification (raising
    :class:`MemoryBudgetError` above the cap); ``False`` keeps the
    operator form.
    """
    Q = ts.window_matrix()
    rows, cols = cfg.n_blocks, cfg.n_blocks * cfg.K * cfg.T
    entries = rows * cols
    if materialize is None:
        materialize = entries <= cfg.phi_cap
    elif materialize and entries > cfg.phi_cap:
        raise MemoryBudgetError(
            f"dense pilot matrix needs {entries} entries > cap {cfg.phi_cap}"
        )
    dense = None
    if materialize:
        M, N, L_p, K, T = cfg.M, cfg.N, cfg.L_p, cfg.K, cfg.T
        dense = np.zeros((rows, cols), dtype=complex)
        for t in range(T):
            # slot block: I_M kron blkdiag_n(I_Lp kron q_n(t)^T)
            for m in range(M):
                for n in range(N):
                    for l in range(L_p):
                        r = (m * N + n) * L_p + l
                        c0 = t * rows * K + r * K
                        dense[r, c0 : c0 + K] = Q[n, t, :]
    phi = PilotMatrix(cfg=cfg, Q=Q, dense=dense)
    ts.phi = phi
    return phi


def synthesize_rx_direct(
    ch: ChannelRealization, ts: TrainingSet, cfg: SystemConfig
) -> np.ndarray:
    """Noiseless reception by direct summation over antennas and paths.

    y_m(t) = sum_n sum_l h_{m,n,l} * q_n(t - kappa_{m,n,l}); reference
    oracle for the structured matrix route, kept as plain loops.
    """
    from .channel import block_rows

    M, N, L_p, T = cfg.M, cfg.N, cfg.L_p, cfg.T
    h = block_rows(ch.H, M).reshape(M, N, L_p)
    Y = np.zeros((M, T), dtype=complex)
    for t in range(1, T + 1):
        for m in range(1, M + 1):
            acc = 0.0 + 0.0j
            for n in range(1, N + 1):
                for l in range(L_p):
                    kap = int(ch.kappa_idx[m - 1, n - 1, l])
                    acc += h[m - 1, n - 1, l] * ts.symbol(n, t - kap)
            Y[m - 1, t - 1] = acc
    return Y


def synthesize_rx_matrix(H: np.ndarray, phi, E) -> np.ndarray:
    """Structured product Y = H * Phi * E (noise added separately).

    ``phi`` may be a dense ndarray or a :class:`PilotMatrix`; ``E`` a dense
    lifted matrix or a :class:`DelaySelector`.  Dimension mismatches raise
    with the offending factor named.
    """
    if isinstance(phi, PilotMatrix):
        if isinstance(E, DelaySelector):
            G = phi.apply_to_e(E.e)
        elif isinstance(E, np.ndarray) and E.ndim == 1:
            G = phi.apply_to_e(E)
        else:
            E = np.asarray(E)
            dense = phi.materialize()
            if dense.shape[1] != E.shape[0]:
                raise ValueError(
                    f"E has {E.shape[0]} rows, Phi has {dense.shape[1]} columns"
                )
            G = dense @ E
    else:
        phi = np.asarray(phi)
        if isinstance(E, DelaySelector):
            T = phi.shape[1] // E.e.shape[0]
            E = E.lifted(T)
        E = np.asarray(E)
        if phi.shape[1] != E.shape[0]:
            raise ValueError(
                f"E has {E.shape[0]} rows, Phi has {phi.shape[1]} columns"
            )
        G = phi @ E
    H = np.asarray(H)
    if H.shape[1] != G.shape[0]:
        raise ValueError(
            f"H has {H.shape[1]} columns, Phi*E has {G.shape[0]} rows"
        )
    return H @ G


def add_awgn(
    Y: np.ndarray,
    snr_db: float,
    signal_power: float | None,
    rng: np.random.Generator,
) -> RxBlock:
    """Add circularly-symmetric white noise at the requested SNR.

    ``signal_power`` defaults to the empirical mean power of ``Y`` (the SNR
    reference used throughout).  An infinite SNR is the no-noise sentinel.
    """
    if np.isinf(snr_db):
        return RxBlock(Y=Y.copy(), sigma_n2=0.0)
    if signal_power is None:
        signal_power = float(np.mean(np.abs(Y) ** 2))
    sigma_n2 = signal_power / 10.0 ** (snr_db / 10.0)
    noise = np.sqrt(sigma_n2 / 2.0) * (
        rng.standard_normal(Y.shape) + 1j * rng.standard_normal(Y.shape)
    )
    return RxBlock(Y=Y + noise, sigma_n2=float(sigma_n2))


def dump_signals_csv(ts: TrainingSet, Y: np.ndarray, qbar_path, y_path) -> None:
    """Dump (qbar, Y) for cross-implementation differential testing.

    Row-major; each complex value is written as one quoted "re,im" cell.
    """

    def _write(path, mat):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in np.asarray(mat):
                w.writerow([f"{v.real!r},{v.imag!r}" for v in row])

    _write(qbar_path, ts.qbar)
    _write(y_path, Y)
