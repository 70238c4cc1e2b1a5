"""Block-sparse beamspace factorization of the effective channel matrix.

The M x (M*N*L_p) block-diagonal channel matrix factors exactly as
H = F1 * Z * F2 where F1/F2 are built from unitary DFT matrices, selection
vectors, identities and ones blocks, and Z is block sparse.

Layout.  With unitary DFTs F_rx (M-point) and F_tx (N-point) and steering
vectors a carrying 1/sqrt(dim) scaling, the per-path beamspace vectors are
z_rx = F_rx^H a_rx and z_tx = F_tx^H a_tx (one-hot for on-grid angles).
The stored beamspace block has shape (M*N*L_p) x (N*N*L_p): a grid of
(N*L_p) x (N*L_p) cells of size M x N whose diagonal cell (n, l) holds
beta_l * z_rx(l) z_tx(l)^H with beta_l = alpha_bar_l * sqrt(M*N).  The full
factor-compatible matrix repeats that block M times along its diagonal;
the repetition is implied, never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BeamspaceFactors",
    "BeamspaceOp",
    "build_f1",
    "build_f2",
    "build_factors",
    "channel_to_beamspace",
    "beamspace_to_channel",
    "embed_diag",
    "extract_diag",
    "steering_vector",
    "beamspace_dictionary",
    "export_beamspace_csv",
]


def dft_unitary(dim: int) -> np.ndarray:
    """Unitary DFT matrix, F[k, m] = exp(-2j*pi*k*m/dim)/sqrt(dim)."""
    k = np.arange(dim)
    return np.exp(-2j * np.pi * np.outer(k, k) / dim) / np.sqrt(dim)


def steering_vector(dim: int, theta: float) -> np.ndarray:
    """Unit-norm array response [1, e^{-j2pi theta}, ...] / sqrt(dim)."""
    return np.exp(-2j * np.pi * np.arange(dim) * theta) / np.sqrt(dim)


@dataclass
class BeamspaceFactors:
    """Materialized factor pair (and optionally the beamspace block)."""

    F1: np.ndarray              # M x (M^2 * N * L_p)
    F2: np.ndarray              # (M * N^2 * L_p) x (M * N * L_p)
    Z: np.ndarray | None = None


def build_f1(M: int, N: int, L_p: int) -> np.ndarray:
    """RX-side factor: block-diagonal, block m repeats DFT row m N*L_p times."""
    F_rx = dft_unitary(M)
    width = N * L_p * M
    F1 = np.zeros((M, M * width), dtype=complex)
    for m in range(M):
        F1[m, m * width : (m + 1) * width] = np.tile(F_rx[m, :], N * L_p)
    return F1


def build_f2(M: int, N: int, L_p: int) -> np.ndarray:
    """TX-side factor: I_M kron blkdiag_n(I_{L_p} kron F_tx^H delta_n)."""
    F_tx_h = dft_unitary(N).conj().T
    B = np.zeros((N * L_p * N, N * L_p), dtype=complex)
    for n in range(N):
        for l in range(L_p):
            w = n * L_p + l
            B[w * N : (w + 1) * N, w] = F_tx_h[:, n]
    return np.kron(np.eye(M), B)


def build_factors(M: int, N: int, L_p: int) -> BeamspaceFactors:
    return BeamspaceFactors(F1=build_f1(M, N, L_p), F2=build_f2(M, N, L_p))


def channel_to_beamspace(paths: list, M: int, N: int) -> np.ndarray:
    """Beamspace block of a channel given its path parameters.

    Returns the (M*N*L_p) x (N*N*L_p) block whose diagonal cells hold the
    per-path outer products; reconstruction through the factors is exact
    for arbitrary (on- or off-grid) angles.
    """
    L_p = len(paths)
    F_rx_h = dft_unitary(M).conj().T
    F_tx_h = dft_unitary(N).conj().T
    Zd = np.zeros((N * L_p, M, N), dtype=complex)
    for l, p in enumerate(paths):
        a_rx = steering_vector(M, p.theta_rx)
        a_tx = steering_vector(N, p.theta_tx)
        z_rx = F_rx_h @ a_rx
        z_tx = F_tx_h @ a_tx
        beta = p.alpha_bar * np.sqrt(M * N)
        cell = beta * np.outer(z_rx, z_tx.conj())
        for n in range(N):
            Zd[n * L_p + l] = cell
    return embed_diag(Zd)


def embed_diag(Zd: np.ndarray) -> np.ndarray:
    """Embed per-cell tensor (N*L_p, M, N) into the block matrix layout."""
    W, M, N = Zd.shape
    Z = np.zeros((W * M, W * N), dtype=complex)
    for w in range(W):
        Z[w * M : (w + 1) * M, w * N : (w + 1) * N] = Zd[w]
    return Z


def extract_diag(Z: np.ndarray, M: int, N: int) -> np.ndarray:
    """Inverse of :func:`embed_diag` (diagonal cells only)."""
    W = Z.shape[0] // M
    Zd = np.empty((W, M, N), dtype=complex)
    for w in range(W):
        Zd[w] = Z[w * M : (w + 1) * M, w * N : (w + 1) * N]
    return Zd


class BeamspaceOp:
    """Fast forward/adjoint synthesis maps for the beamspace block.

    forward: cell tensor (N*L_p, M, N) -> block rows (M, N*L_p) of H.
    adjoint: block rows residual -> cell tensor gradient.
    """

    def __init__(self, M: int, N: int, L_p: int):
        self.M, self.N, self.L_p = M, N, L_p
        self.F_rx = dft_unitary(M)
        F_tx_h = dft_unitary(N).conj().T
        # CH[w, i] = i-th entry of F_tx^H delta_n(w)
        n_of_w = np.repeat(np.arange(N), L_p)
        self.CH = F_tx_h.T[n_of_w, :]                 # (N*L_p, N)

    def forward(self, Zd: np.ndarray) -> np.ndarray:
        return np.einsum("mv,wvi,wi->mw", self.F_rx, Zd, self.CH, optimize=True)

    def adjoint(self, R: np.ndarray) -> np.ndarray:
        return np.einsum(
            "mv,mw,wi->wvi", self.F_rx.conj(), R, self.CH.conj(), optimize=True
        )


def beamspace_to_channel(
    Z: np.ndarray, F1: np.ndarray | None = None, F2: np.ndarray | None = None
) -> np.ndarray:
    """Reconstruct H = F1 * Z * F2.

    ``Z`` is the stored block (2-D) or the cell tensor (3-D).  With
    materialized factors the literal triple product is computed (the
    M-fold block repetition of Z is filled in); without them an
    equivalent fast synthesis is used.
    """
    if F1 is not None and F2 is not None:
        M = F1.shape[0]
        if Z.ndim == 3:
            Z = embed_diag(Z)
        Z_full = np.kron(np.eye(M), Z)
        if F1.shape[1] != Z_full.shape[0]:
            raise ValueError(
                f"F1 has {F1.shape[1]} columns, Z expands to {Z_full.shape[0]} rows"
            )
        if Z_full.shape[1] != F2.shape[0]:
            raise ValueError(
                f"Z expands to {Z_full.shape[1]} columns, F2 has {F2.shape[0]} rows"
            )
        return F1 @ Z_full @ F2

    from .channel import embed_block_rows

    if Z.ndim == 2:
        # infer (M, N) from the grid: rows = W*M, cols = W*N with W = N*L_p
        raise ValueError(
            "fast synthesis needs the cell tensor; pass (F1, F2) for the "
            "matrix form or use extract_diag first"
        )
    W, M, N = Z.shape
    op = BeamspaceOp(M, N, W // N)
    return embed_block_rows(op.forward(Z))


def beamspace_dictionary(M: int, N: int) -> np.ndarray:
    """Grid dictionary of DFT outer products for the conventional channel.

    Column p*N + q is vec(u_p v_q^H) (column-major) with u_p, v_q the
    columns of the conjugate DFT matrices; on-grid rank-one channels are
    exactly 1-sparse in this dictionary.
    """
    U = dft_unitary(M).conj().T
    V = dft_unitary(N).conj().T
    F = np.empty((M * N, M * N), dtype=complex)
    for p in range(M):
        for q in range(N):
            F[:, p * N + q] = np.outer(U[:, p], V[:, q].conj()).flatten(order="F")
    return F


def export_beamspace_csv(Z: np.ndarray, path) -> None:
    """Write the squared-magnitude heatmap of Z as (row, col, magnitude)."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "magnitude"])
        mag = np.abs(Z) ** 2
        for r in range(Z.shape[0]):
            for c in range(Z.shape[1]):
                w.writerow([r, c, f"{mag[r, c]:.12g}"])
