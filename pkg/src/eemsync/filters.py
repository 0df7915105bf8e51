"""Kalman filters for the clock ensemble.

Three variants share one model: the standard full-state filter (whose
covariance diverges along the unobservable subspace while its gain still
converges), the determinate decomposed filter (which never forms the
diverging block), and the stationary filter running on precomputed
fixed-point gains.  The stationary solver also provides the
weight-transport shortcuts that express the unobservable gain and
covariance of an arbitrary weight basis through the observable solution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .allan import weight_long
from .decomp import Decomposition, generalized_inverse, project_state
from .errors import ConvergenceError, NumericalError
from .models import EnsembleModel

__all__ = [
    "StandardKFState",
    "DeterminateKFState",
    "StationaryKFState",
    "StationaryGains",
    "standard_kf_init",
    "standard_kf_step",
    "determinate_kf_init",
    "determinate_kf_step",
    "solve_stationary",
    "stationary_kf_init",
    "stationary_kf_step",
    "unobservable_gain_from_observable",
    "unobservable_covariance_from_observable",
    "write_gains_json",
]

InputPair = Optional[Tuple[np.ndarray, float]]


def _sym(P: np.ndarray) -> np.ndarray:
    # symmetrize after every update to suppress drift
    return 0.5 * (P + P.T)


def _spd_solve_gain(S: np.ndarray, CP: np.ndarray) -> np.ndarray:
    """Gain P C^T S^{-1} computed as solve(S, C P)^T via a PD factorization."""
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    return cho_solve(factor, CP).T


def _input_pair(omega_prev: InputPair, n_obs_inputs: int) -> Tuple[np.ndarray, float]:
    if omega_prev is None:
        return np.zeros(n_obs_inputs), 0.0
    omega_o, omega_obar = omega_prev
    omega_o = np.asarray(omega_o, dtype=float)
    if omega_o.shape != (n_obs_inputs,):
        raise ValueError(
            f"omega_o must have shape ({n_obs_inputs},), got {omega_o.shape}"
        )
    return omega_o, float(omega_obar)


# ---------------------------------------------------------------------------
# standard full-state filter


@dataclass
class StandardKFState:
    """Full-state filter state.

    ``xhat`` / ``P`` hold the posterior consumed by the next predict;
    ``xhat_minus`` / ``P_minus`` / ``H`` record the prior and gain of the
    latest step (``None`` until the first step runs).
    """

    xhat: np.ndarray
    P: np.ndarray
    xhat_minus: Optional[np.ndarray] = None
    P_minus: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None


def standard_kf_init(
    model: EnsembleModel,
    x0: Optional[np.ndarray] = None,
    P0: Optional[np.ndarray] = None,
) -> StandardKFState:
    """Initial state: zero estimate, one-step process covariance."""
    n2 = 2 * model.N
    xhat = np.zeros(n2) if x0 is None else np.asarray(x0, dtype=float).copy()
    P = model.bigQ.copy() if P0 is None else np.asarray(P0, dtype=float).copy()
    if xhat.shape != (n2,) or P.shape != (n2, n2):
        raise ValueError("x0 / P0 dimensions do not match the model")
    return StandardKFState(xhat=xhat, P=P)


def standard_kf_step(
    model: EnsembleModel,
    state: StandardKFState,
    u_prev: Optional[np.ndarray],
    y: np.ndarray,
) -> StandardKFState:
    """One cycle of the five-line recursion.

    ``u_prev`` is the input applied at the previous step (``None`` reads
    as zero); ``y`` is the current relative measurement.
    """
    bigA, bigC = model.bigA, model.bigC
    y = np.asarray(y, dtype=float)

    xm = bigA @ state.xhat
    if u_prev is not None:
        xm = xm + model.bigB @ np.asarray(u_prev, dtype=float)
    Pm = _sym(bigA @ state.P @ bigA.T + model.bigQ)

    CP = bigC @ Pm
    S = CP @ bigC.T + model.meas.R
    H = _spd_solve_gain(S, CP)

    P = _sym(Pm - H @ CP)
    xhat = xm + H @ (y - bigC @ xm)
    return StandardKFState(xhat=xhat, P=P, xhat_minus=xm, P_minus=Pm, H=H)


# ---------------------------------------------------------------------------
# determinate decomposed filter


@dataclass
class DeterminateKFState:
    """Decomposed filter state; the unobservable-unobservable covariance
    block never appears.

    ``xi_o_hat`` / ``xi_obar_hat`` are the prior estimates of the latest
    step, as propagated by the decomposed recursion; the ``*_post``
    fields hold the matching posteriors (consumed by the next predict).
    ``P_oo`` / ``P_bo`` are posterior covariances.
    """

    xi_o_post: Optional[np.ndarray] = None
    xi_obar_post: Optional[np.ndarray] = None
    P_oo: Optional[np.ndarray] = None
    P_bo: Optional[np.ndarray] = None
    xi_o_hat: Optional[np.ndarray] = None
    xi_obar_hat: Optional[np.ndarray] = None
    P_oo_minus: Optional[np.ndarray] = None
    P_bo_minus: Optional[np.ndarray] = None
    H_o: Optional[np.ndarray] = None
    H_bo: Optional[np.ndarray] = None


def determinate_kf_init(d: Decomposition, x0: Optional[np.ndarray] = None) -> DeterminateKFState:
    """Initial state matching the standard filter's initialization.

    With P_oo = Qo and P_bo = Qbo this corresponds exactly to the
    standard filter started from P = bigQ, so the two recursions stay
    equivalent step by step.
    """
    n_obs = 2 * (d.N - 1)
    if x0 is None:
        xi_o, xi_obar = np.zeros(n_obs), np.zeros(2)
    else:
        xi_o, xi_obar = project_state(np.asarray(x0, dtype=float), d)
    return DeterminateKFState(
        xi_o_post=xi_o,
        xi_obar_post=xi_obar,
        P_oo=d.Qo.copy(),
        P_bo=d.Qbo.copy(),
    )


def determinate_kf_step(
    d: Decomposition,
    R: np.ndarray,
    state: DeterminateKFState,
    omega_prev: InputPair,
    y: np.ndarray,
) -> DeterminateKFState:
    """One cycle of the five-block decomposed recursion.

    ``omega_prev`` is the decomposed input pair (omega_o, omega_obar)
    applied at the previous step, or ``None`` for zero input.  The
    coupling block links the observable state into the unobservable
    prediction; for weight bases it is exactly zero.
    """
    omega_o, omega_obar = _input_pair(omega_prev, d.N - 1)
    y = np.asarray(y, dtype=float)

    xo_m = d.Ao @ state.xi_o_post + d.Bo @ omega_o
    xb_m = d.coupling @ state.xi_o_post + d.A @ state.xi_obar_post + d.B * omega_obar
    Poo_m = _sym(d.Ao @ state.P_oo @ d.Ao.T + d.Qo)
    Pbo_m = d.coupling @ state.P_oo @ d.Ao.T + d.A @ state.P_bo @ d.Ao.T + d.Qbo

    CP = d.Co @ Poo_m
    S = CP @ d.Co.T + R
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    H_o = cho_solve(factor, CP).T
    H_bo = cho_solve(factor, d.Co @ Pbo_m.T).T

    P_oo = _sym(Poo_m - H_o @ CP)
    P_bo = Pbo_m - H_bo @ CP

    innov = y - d.Co @ xo_m
    return DeterminateKFState(
        xi_o_post=xo_m + H_o @ innov,
        xi_obar_post=xb_m + H_bo @ innov,
        P_oo=P_oo,
        P_bo=P_bo,
        xi_o_hat=xo_m,
        xi_obar_hat=xb_m,
        P_oo_minus=Poo_m,
        P_bo_minus=Pbo_m,
        H_o=H_o,
        H_bo=H_bo,
    )


# ---------------------------------------------------------------------------
# stationary gains and filter


@dataclass(frozen=True)
class StationaryGains:
    """Fixed point of the decomposed covariance recursion."""

    P_oo_star: np.ndarray
    P_bo_star: np.ndarray
    H_o_star: np.ndarray
    H_bo_star: np.ndarray
    residual_oo: float          # relative residual of the observable equation
    residual_bo: float          # relative residual of the cross equation
    iterations: int
    spectral_radius: float      # rho(Ao (I - H_o_star Co)), < 1 at a valid fixed point


def solve_stationary(
    d: Decomposition,
    R: np.ndarray,
    tol: float = 1e-13,
    max_iter: int = 10**6,
    warm_start: Optional[np.ndarray] = None,
) -> StationaryGains:
    """Stationary covariances and gains for one decomposition.

    The observable prior covariance is obtained by iterating the exact
    covariance recursion from Qo (or from ``warm_start``, which lets a
    solution for one weight seed the solve for another: the observable
    fixed point does not depend on the weight) until the relative
    Frobenius increment drops below ``tol``, then polished to the
    machine floor by re-solving the frozen-gain covariance equation.
    The cross covariance then solves a linear system of dimension
    4(N-1) by vectorization.  Both fixed-point residuals are checked
    before returning.
    """
    n_obs = 2 * (d.N - 1)
    R = np.asarray(R, dtype=float)
    P = d.Qo.copy() if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    if P.shape != (n_obs, n_obs):
        raise ValueError(f"warm_start must have shape ({n_obs}, {n_obs})")

    def advance(P_prior: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        CP = d.Co @ P_prior
        S = CP @ d.Co.T + R
        H = _spd_solve_gain(S, CP)
        P_next = _sym(d.Ao @ (P_prior - H @ CP) @ d.Ao.T + d.Qo)
        return P_next, H, CP

    iterations = 0
    rel = np.inf
    for iterations in range(1, max_iter + 1):
        P_next, _, _ = advance(P)
        rel = np.linalg.norm(P_next - P, "fro") / max(np.linalg.norm(P_next, "fro"), 1e-300)
        P = P_next
        if rel <= tol:
            break
    else:
        raise ConvergenceError(
            f"observable covariance did not converge in {max_iter} iterations "
            f"(last relative increment {rel:.3e})"
        )

    # polish to the machine floor: the iteration leaves a truncation error
    # of order tol/(1 - rho^2), which the ill-conditioned cross solve below
    # would amplify by 1/(1 - rho).  Re-solving the frozen-gain (Joseph
    # form) Stein equation removes it; gain suboptimality only enters at
    # second order, so one or two solves suffice.
    eye_obs = np.eye(n_obs)
    for _ in range(5):
        CP = d.Co @ P
        H = _spd_solve_gain(CP @ d.Co.T + R, CP)
        Z_pol = d.Ao @ (eye_obs - H @ d.Co)
        rhs = _sym(d.Qo + d.Ao @ H @ R @ H.T @ d.Ao.T)
        try:
            vec = np.linalg.solve(
                np.eye(n_obs**2) - np.kron(Z_pol, Z_pol), rhs.flatten(order="F")
            )
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "frozen-gain covariance equation is singular during polish"
            ) from exc
        P_polished = _sym(vec.reshape((n_obs, n_obs), order="F"))
        move = np.linalg.norm(P_polished - P, "fro") / max(
            np.linalg.norm(P, "fro"), 1e-300
        )
        P = P_polished
        if move <= 1e-15:
            break

    CP = d.Co @ P
    S = CP @ d.Co.T + R
    H_o = _spd_solve_gain(S, CP)
    gain_complement = np.eye(n_obs) - H_o @ d.Co
    Z = d.Ao @ gain_complement

    # cross equation P_bo = A P_bo Z^T + X, solved by column-major vectorization
    X = d.Qbo + d.coupling @ P @ gain_complement.T @ d.Ao.T
    M = np.eye(4 * (d.N - 1)) - np.kron(Z, d.A)
    try:
        vec = np.linalg.solve(M, X.flatten(order="F"))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "vectorized cross-covariance system is singular; the observable "
            "closed loop is not contractive"
        ) from exc
    P_bo = vec.reshape((2, n_obs), order="F")
    H_bo = _spd_solve_gain(S, d.Co @ P_bo.T)

    P_check, _, _ = advance(P)
    residual_oo = float(
        np.linalg.norm(P_check - P, "fro") / max(np.linalg.norm(P, "fro"), 1e-300)
    )
    bo_map = d.A @ P_bo @ Z.T + X
    residual_bo = float(
        np.linalg.norm(bo_map - P_bo, "fro") / max(np.linalg.norm(P_bo, "fro"), 1e-300)
    )
    if residual_oo > 1e-10 or residual_bo > 1e-10:
        raise ConvergenceError(
            f"stationary solution failed its fixed-point residual check "
            f"(observable {residual_oo:.3e}, cross {residual_bo:.3e})"
        )

    rho = float(np.max(np.abs(np.linalg.eigvals(Z))))
    return StationaryGains(
        P_oo_star=P,
        P_bo_star=P_bo,
        H_o_star=H_o,
        H_bo_star=H_bo,
        residual_oo=residual_oo,
        residual_bo=residual_bo,
        iterations=iterations,
        spectral_radius=rho,
    )


@dataclass
class StationaryKFState:
    """Prior estimates propagated by the constant-gain recursion."""

    xi_o_hat: np.ndarray
    xi_obar_hat: np.ndarray
    xi_o_post: Optional[np.ndarray] = None
    xi_obar_post: Optional[np.ndarray] = None


def stationary_kf_init(d: Decomposition, x0: Optional[np.ndarray] = None) -> StationaryKFState:
    if x0 is None:
        return StationaryKFState(np.zeros(2 * (d.N - 1)), np.zeros(2))
    xi_o, xi_obar = project_state(np.asarray(x0, dtype=float), d)
    return StationaryKFState(xi_o_hat=xi_o, xi_obar_hat=xi_obar)


def stationary_kf_step(
    d: Decomposition,
    g: StationaryGains,
    state: StationaryKFState,
    omega_prev: InputPair,
    y: np.ndarray,
) -> StationaryKFState:
    """Constant-gain two-line recursion on the prior estimates.

    ``omega_prev`` here is the decomposed input applied at the current
    step (the prediction advances past it), matching the closed-loop
    ordering in which the input is computed from the prior estimate.
    """
    omega_o, omega_obar = _input_pair(omega_prev, d.N - 1)
    innov = np.asarray(y, dtype=float) - d.Co @ state.xi_o_hat
    post_o = state.xi_o_hat + g.H_o_star @ innov
    post_obar = state.xi_obar_hat + g.H_bo_star @ innov
    return StationaryKFState(
        xi_o_hat=d.Ao @ post_o + d.Bo @ omega_o,
        xi_obar_hat=d.coupling @ post_o + d.A @ post_obar + d.B * omega_obar,
        xi_o_post=post_o,
        xi_obar_post=post_obar,
    )


# ---------------------------------------------------------------------------
# weight-transport shortcuts for the unobservable part


def _transport(d: Decomposition, Sigma2: np.ndarray) -> np.ndarray:
    if d.q is None:
        raise ValueError("the weight-transport shortcuts require a weight basis")
    q_inf = weight_long(Sigma2).q
    v_inf_plus = generalized_inverse(d.V, q_inf)
    return np.kron(np.eye(2), (d.q @ v_inf_plus)[None, :])


def unobservable_gain_from_observable(
    d: Decomposition, H_o_star: np.ndarray, Sigma2: np.ndarray
) -> np.ndarray:
    """Unobservable stationary gain without solving the cross equation.

    H_bo_star = (I2 kron q^T Vinf_plus) H_o_star, where Vinf_plus is the
    generalized inverse taken at the long-term weight.  Vanishes exactly
    when q equals that weight.
    """
    return _transport(d, Sigma2) @ np.asarray(H_o_star, dtype=float)


def unobservable_covariance_from_observable(
    d: Decomposition,
    P_oo_star: np.ndarray,
    Sigma1: np.ndarray,
    Sigma2: np.ndarray,
) -> np.ndarray:
    """Unobservable stationary cross covariance by weight transport.

    Adds the weight-independent offset whose only nonzero block couples
    the mean phase to the observable frequency coordinates.
    """
    base = _transport(d, Sigma2) @ np.asarray(P_oo_star, dtype=float)
    q_inf = weight_long(Sigma2).q
    Sigma1 = np.asarray(Sigma1, dtype=float)
    if Sigma1.ndim == 1:
        Sigma1 = np.diag(Sigma1)
    offset = np.zeros_like(base)
    offset[0, d.N - 1 :] = -(q_inf @ Sigma1 @ d.V.T)
    return base + offset


def write_gains_json(g: StationaryGains, path) -> None:
    """Serialize a stationary solution; matrices as row-major nested lists."""
    doc = {
        "P_oo_star": g.P_oo_star.tolist(),
        "P_bo_star": g.P_bo_star.tolist(),
        "H_o_star": g.H_o_star.tolist(),
        "H_bo_star": g.H_bo_star.tolist(),
        "residuals": {"oo": g.residual_oo, "bo": g.residual_bo},
        "iterations": g.iterations,
        "spectral_radius": g.spectral_radius,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
