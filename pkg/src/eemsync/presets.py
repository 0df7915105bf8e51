"""Bundled demonstration ensemble: ten commercial cesium clocks.

Noise intensities and pairwise measurement-noise levels measured on a
ten-clock ensemble; used by the bundled scenario configs and the test
suite.  All arrays are copies on access, so callers can mutate freely.
"""

from __future__ import annotations

import numpy as np

from .models import EnsembleModel, NoiseParams, build_ensemble, star_measurement

# white FM intensity per clock, 1/sqrt(s)
DEMO_SIGMA1 = 1e-9 * np.array(
    [0.1700, 0.0886, 0.1221, 0.1273, 0.2185, 0.1063, 0.1805, 0.2168, 0.0930, 0.1801]
)

# random-walk FM intensity per clock, 1/sqrt(s^3)
DEMO_SIGMA2 = 1e-12 * np.array(
    [0.1507, 0.0532, 0.0167, 0.0771, 0.2940, 0.0492, 0.0407, 0.0829, 0.0520, 0.0566]
)

# measurement-noise standard deviation of each difference measurement
# (clock i vs clock 10, star topology), seconds
DEMO_MEAS_STD = 1e-14 * np.array(
    [0.4353, 0.0759, 0.4720, 0.1166, 0.4148, 0.0885, 0.0998, 0.2453, 0.0373]
)

# default controller settings for the demonstration scenarios
DEFAULT_OBS_GAIN_COEFFS = (0.1, 1.0)         # F_o = [c1/tau, c2] kron I_{N-1}
DEFAULT_COLLECTIVE_GAIN_COEFFS = (0.01, 1.0)  # K_bo = [c1/(m*tau), c2]
DEFAULT_COLLECTIVE_PERIOD = 200


def demo_noise_params() -> list[NoiseParams]:
    """Per-clock NoiseParams for the bundled ten-clock ensemble."""
    return [NoiseParams(s1, s2) for s1, s2 in zip(DEMO_SIGMA1, DEMO_SIGMA2)]


def demo_ensemble(tau: float = 1.0, n_clocks: int | None = None) -> EnsembleModel:
    """Build the bundled ensemble (star measurement against clock N).

    n_clocks selects a leading subset; the measurement noise of pair
    (i, N) keeps clock i's bundled level.
    """
    params = demo_noise_params()
    stds = DEMO_MEAS_STD.copy()
    if n_clocks is not None:
        if not 2 <= n_clocks <= len(params):
            raise ValueError(f"n_clocks must be in [2, {len(params)}], got {n_clocks}")
        params = params[:n_clocks]
        stds = stds[: n_clocks - 1]
    N = len(params)
    V = star_measurement(N)
    R = np.diag(stds ** 2)
    return build_ensemble(params, V, R, tau)
