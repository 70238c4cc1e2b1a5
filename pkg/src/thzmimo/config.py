"""Scenario constants for the simulator and the estimators.

All dimensioning, channel statistics and solver hyperparameters live in a
single immutable :class:`SystemConfig`.  Configs are plain data: they can be
loaded from JSON (field names match the attribute names) and copied with
``dataclasses.replace`` for parameter sweeps.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "SystemConfig",
    "config_from_mapping",
    "load_config",
    "load_absorption_table",
]


class ConfigError(ValueError):
    """Raised for physically or structurally invalid configurations."""


@dataclass(frozen=True)
class SystemConfig:
    """All scenario constants.

    Notes on units: frequencies in Hz, delays in seconds, distances in
    meters, powers in dBm/dB.  ``sigma_p2`` follows the convention that 0
    means noiseless initialization and any positive value is a variance in
    dB (linear variance ``10**(sigma_p2/10)``).
    """

    N: int = 8                  # TX antenna count
    M: int = 8                  # RX antenna count
    f_c: float = 150e9          # carrier frequency [Hz]
    W: float = 10e9             # bandwidth [Hz]; sampling period is 1/(2W)
    T: int = 24                 # training length [slots]
    L_p: int = 3                # resolvable path count
    K: int = 8                  # delay budget [samples]
    L_t: int = 0                # channel filter taps; 0 -> defaults to K
    d_tx_rx: float = 1.0        # TX-RX distance [m]
    xi: tuple = ()              # per-path pathloss exponents; () -> (2,3,3,..)
    kappa_abs: float = 0.5      # molecular absorption coefficient at f_c
    P_t: float = 10.0           # transmit power [dBm] (metadata only)
    snr_db: float = 30.0        # per-experiment SNR [dB]; inf disables noise
    rho: float = 6.0            # ADMM penalty
    lambda_e: float | None = None   # delay-vector sparsity weight; None -> auto
    lambda_z: float = 1.0       # beamspace sparsity weight
    I_max: int = 50             # ADMM iteration cap
    thr: float = 0.5            # binarization threshold
    sigma_p2: float = 0.0       # position-noise variance [dB]; 0 -> exact
    seed: int = 0               # RNG seed
    e_solver: str = "lasso"     # delay-step solver: "lasso" or "omp"
    K_u: int | None = None      # OMP atom budget; None -> M*N*L_p
    phi_cap: int = 2 ** 24      # dense-matrix entry budget for pilot matrices

    def __post_init__(self):
        if min(self.N, self.M, self.L_p, self.T, self.K) < 1:
            raise ConfigError("N, M, L_p, T and K must all be >= 1")
        if self.W <= 0 or self.f_c <= 0:
            raise ConfigError("f_c and W must be positive")
        if self.d_tx_rx <= 0:
            raise ConfigError("d_tx_rx must be positive")
        if self.kappa_abs < 0:
            raise ConfigError("kappa_abs must be non-negative")
        if not 0.0 < self.thr < 1.0:
            raise ConfigError("thr must lie in (0, 1)")
        if self.e_solver not in ("lasso", "omp"):
            raise ConfigError(f"unknown e_solver {self.e_solver!r}")
        if self.L_t == 0:
            object.__setattr__(self, "L_t", self.K)
        if self.L_t < 1:
            raise ConfigError("L_t must be >= 1")
        if not self.xi:
            object.__setattr__(
                self, "xi", (2.0,) + (3.0,) * (self.L_p - 1)
            )
        else:
            object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        if len(self.xi) != self.L_p:
            raise ConfigError(
                f"xi has length {len(self.xi)}, expected L_p={self.L_p}"
            )

    @property
    def T_s(self) -> float:
        """Sampling period, exactly 1/(2W)."""
        return 1.0 / (2.0 * self.W)

    @property
    def lambda_c(self) -> float:
        """Carrier wavelength [m]."""
        return 299792458.0 / self.f_c

    @property
    def n_blocks(self) -> int:
        """Number of one-hot delay blocks, M*N*L_p."""
        return self.M * self.N * self.L_p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["xi"] = list(self.xi)
        d["T_s"] = self.T_s
        return d


_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)}


def config_from_mapping(raw: dict, base_dir: str | Path = ".") -> SystemConfig:
    """Build a :class:`SystemConfig` from a parsed JSON mapping.

    Keys map one-to-one onto the dataclass fields.  Two extra keys are
    understood: ``T_s`` (validated against 1/(2W)) and ``kappa_table``
    (path to an absorption CSV, relative to ``base_dir``; sets
    ``kappa_abs`` by interpolation at ``f_c``).
    """
    if not isinstance(raw, dict):
        raise ConfigError("expected a JSON object for the config")
    raw = dict(raw)
    ts_given = raw.pop("T_s", None)
    table = raw.pop("kappa_table", None)
    unknown = set(raw) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "xi" in raw and raw["xi"] is not None:
        raw["xi"] = tuple(raw["xi"])
    elif "xi" in raw:
        del raw["xi"]
    if table is not None:
        kappa_of = load_absorption_table(Path(base_dir) / table)
        raw["kappa_abs"] = float(kappa_of(raw.get("f_c", SystemConfig.f_c)))
    cfg = SystemConfig(**raw)
    if ts_given is not None and not math.isclose(
        float(ts_given), cfg.T_s, rel_tol=1e-12
    ):
        raise ConfigError(
            f"T_s={ts_given} inconsistent with 1/(2W)={cfg.T_s}"
        )
    return cfg


def load_config(path: str | Path) -> SystemConfig:
    """Load a :class:`SystemConfig` from a JSON file."""
    path = Path(path)
    return config_from_mapping(json.loads(path.read_text()), path.parent)


def load_absorption_table(path: str | Path):
    """Load a two-column CSV (frequency_hz, kappa) absorption table.

    Returns a callable mapping frequency [Hz] to the absorption coefficient
    by piecewise-linear interpolation (clamped at the table edges).
    """
    freqs, kappas = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                f, k = float(row[0]), float(row[1])
            except ValueError:
                continue  # header row
            freqs.append(f)
            kappas.append(k)
    if not freqs:
        raise ConfigError(f"{path}: no numeric rows in absorption table")
    order = np.argsort(freqs)
    f_arr = np.asarray(freqs)[order]
    k_arr = np.asarray(kappas)[order]
    if np.any(k_arr < 0):
        raise ConfigError(f"{path}: negative absorption coefficient")

    def kappa_of(f_hz: float) -> float:
        return float(np.interp(f_hz, f_arr, k_arr))

    return kappa_of
