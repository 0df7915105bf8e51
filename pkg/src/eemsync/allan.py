"""Allan-variance analytics and ensemble weight optimization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .decomp import EnsembleWeight, weight_vector
from .models import NoiseParams

__all__ = [
    "AllanPlot",
    "GammaMatrix",
    "gamma_matrix",
    "analytical_allan_clock",
    "allan_pi",
    "statistical_allan",
    "allan_plot",
    "optimal_weight",
    "weight_short",
    "weight_long",
    "write_allan_plots",
]


def variance_vector(Sigma: Union[np.ndarray, Sequence[float]]) -> np.ndarray:
    """Accept a diagonal covariance as a matrix or a 1-D variance vector."""
    S = np.asarray(Sigma, dtype=float)
    if S.ndim == 2:
        if S.shape[0] != S.shape[1]:
            raise ValueError(f"covariance must be square, got {S.shape}")
        off = S - np.diag(np.diag(S))
        if np.max(np.abs(off)) > 1e-12 * max(1.0, np.max(np.abs(S))):
            raise ValueError("covariance must be diagonal")
        S = np.diag(S).copy()
    elif S.ndim != 1:
        raise ValueError(f"expected a vector or square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)) or np.any(S < 0):
        raise ValueError("variances must be finite and nonnegative")
    return S


@dataclass(frozen=True)
class GammaMatrix:
    """Interval covariance Gamma(tau) = tau Sigma1 + (tau^3/3) Sigma2."""

    value: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"value must be square, got shape {v.shape}")
        object.__setattr__(self, "value", v)


def gamma_matrix(Sigma1, Sigma2, tau: float) -> GammaMatrix:
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s1 = variance_vector(Sigma1)
    s2 = variance_vector(Sigma2)
    if s1.shape != s2.shape:
        raise ValueError("Sigma1 and Sigma2 must have matching sizes")
    return GammaMatrix(np.diag(tau * s1 + (tau**3 / 3.0) * s2))


def analytical_allan_clock(noise: NoiseParams, tau: float) -> float:
    """Two-noise single-clock Allan variance: sigma1^2/tau + (tau/3) sigma2^2."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return noise.sigma1**2 / tau + (tau / 3.0) * noise.sigma2**2


def allan_pi(q: Union[EnsembleWeight, np.ndarray], Sigma1, Sigma2, tau: float) -> float:
    """Allan variance of the weighted ensemble mean: q^T Gamma(tau) q / tau^2."""
    qv = weight_vector(q)
    g = np.diag(gamma_matrix(Sigma1, Sigma2, tau).value)
    if g.size != qv.size:
        raise ValueError(f"weight has {qv.size} entries, noise has {g.size}")
    return float(qv @ (g * qv) / tau**2)


def statistical_allan(h: np.ndarray, tau: float, m: int) -> Union[float, np.ndarray]:
    """Overlapping second-difference estimator at averaging interval m tau.

    ``h`` is a reading series of length T+1 (optionally one column per
    series); m must lie in the feasible set 1 <= m <= (T-1)//2.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim not in (1, 2) or h.shape[0] < 2:
        raise ValueError("series must be 1-D or 2-D with at least 2 samples")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if int(m) != m:
        raise ValueError(f"m must be an integer, got {m!r}")
    m = int(m)
    T = h.shape[0] - 1
    if m < 1 or 2 * m + 1 > T:
        raise ValueError(f"m={m} is outside the feasible set 1..{max((T - 1) // 2, 0)}")
    d = h[2 * m : T] - 2.0 * h[m : T - m] + h[: T - 2 * m]
    est = (d * d).mean(axis=0) / (2.0 * (m * tau) ** 2)
    return float(est) if h.ndim == 1 else est


@dataclass(frozen=True)
class AllanPlot:
    """Statistical Allan variance over a grid of averaging intervals.

    ``values`` has one entry per interval for a scalar series, one row
    per interval for a vector series.
    """

    m_set: np.ndarray
    intervals: np.ndarray
    values: np.ndarray

    @property
    def points(self):
        return list(zip(self.intervals.tolist(), self.values.tolist()))


def _default_m_grid(m_max: int, per_decade: int = 30) -> np.ndarray:
    if m_max <= 1:
        return np.array([1])
    count = int(np.ceil(per_decade * np.log10(m_max))) + 1
    grid = np.unique(np.round(np.logspace(0.0, np.log10(m_max), count)).astype(int))
    return grid[(grid >= 1) & (grid <= m_max)]


def allan_plot(
    h: np.ndarray,
    tau: float,
    m_subset: Optional[Sequence[int]] = None,
    full_grid: bool = False,
) -> AllanPlot:
    """Evaluate the estimator over an interval grid.

    Defaults to a logarithmically spaced grid (about 30 points per
    decade); ``full_grid`` evaluates every feasible m, which is
    quadratic in the horizon.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim not in (1, 2) or h.shape[0] < 4:
        raise ValueError("series must have at least 4 samples")
    m_max = (h.shape[0] - 2) // 2
    if m_subset is not None:
        m_set = np.unique(np.asarray(m_subset, dtype=int))
        if m_set.size == 0:
            raise ValueError("m_subset must be nonempty")
        bad = m_set[(m_set < 1) | (m_set > m_max)]
        if bad.size:
            raise ValueError(f"intervals {bad.tolist()} outside the feasible set 1..{m_max}")
    elif full_grid:
        m_set = np.arange(1, m_max + 1)
    else:
        m_set = _default_m_grid(m_max)
    values = np.stack([np.atleast_1d(statistical_allan(h, tau, int(m))) for m in m_set])
    if h.ndim == 1:
        values = values[:, 0]
    return AllanPlot(m_set=m_set, intervals=m_set * float(tau), values=values)


def optimal_weight(Sigma1, Sigma2, tau: float) -> EnsembleWeight:
    """Weight minimizing the ensemble-mean Allan variance at interval tau.

    Gamma(tau) is diagonal here, so the inverse-variance form is exact:
    q = Gamma^{-1} 1 / (1^T Gamma^{-1} 1).
    """
    g = np.diag(gamma_matrix(Sigma1, Sigma2, tau).value)
    if np.any(g == 0.0):
        raise ValueError("Gamma(tau) is singular; a clock has zero interval variance")
    w = 1.0 / g
    return EnsembleWeight(w / w.sum())


def weight_short(Sigma1) -> EnsembleWeight:
    """Short-term optimal weight: inverse white-noise variances, normalized."""
    s = variance_vector(Sigma1)
    if np.any(s == 0.0):
        raise ValueError("zero white-noise variance entry")
    w = 1.0 / s
    return EnsembleWeight(w / w.sum())


def weight_long(Sigma2) -> EnsembleWeight:
    """Long-term optimal weight: inverse random-walk variances, normalized."""
    s = variance_vector(Sigma2)
    if np.any(s == 0.0):
        raise ValueError("zero random-walk variance entry")
    w = 1.0 / s
    return EnsembleWeight(w / w.sum())


def write_allan_plots(plots: Dict[str, AllanPlot], out_dir, prefix: str = "allan") -> Dict[str, str]:
    """One CSV per scalar series plus a JSON index mapping names to files.

    Vector-valued plots are split into numbered per-column series.
    """
    os.makedirs(out_dir, exist_ok=True)
    index: Dict[str, str] = {}
    for name, plot in plots.items():
        values = np.atleast_2d(plot.values.T).T  # (n_intervals, n_series)
        multi = values.shape[1] > 1
        for col in range(values.shape[1]):
            series_name = f"{name}_{col + 1}" if multi else name
            fname = f"{prefix}_{series_name}.csv"
            data = np.column_stack([plot.intervals, values[:, col]])
            np.savetxt(
                os.path.join(out_dir, fname),
                data,
                delimiter=",",
                header="interval_s,allan_variance",
                comments="",
                fmt="%.16e",
            )
            index[series_name] = fname
    index_path = os.path.join(out_dir, f"{prefix}_index.json")
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return index
