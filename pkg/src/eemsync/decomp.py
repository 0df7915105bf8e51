"""Observable canonical decomposition of the clock ensemble.

Splits the 2N ensemble state into an observable part (relative clock
states, seen by the difference measurements) and a two-dimensional
unobservable part (the weighted ensemble mean).  The split is
parameterized either by an ensemble-mean weight vector q or by a general
2 x 2N row block selecting the unobservable coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import null_space

from .errors import NumericalError
from .models import EnsembleModel

__all__ = [
    "EnsembleWeight",
    "Decomposition",
    "generalized_inverse",
    "decompose",
    "project_state",
    "reconstruct_state",
    "expand_input",
]

# tolerance for the structural identities; everything here is at most a
# few dense factorizations deep
_IDENTITY_TOL = 1e-10


@dataclass(frozen=True)
class EnsembleWeight:
    """Ensemble-mean weight vector; components must sum to one."""

    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if q.ndim != 1 or q.size == 0:
            raise ValueError("weight must be a nonempty vector")
        if not np.all(np.isfinite(q)):
            raise ValueError("weight entries must be finite")
        total = q.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weight entries must sum to 1, got {total!r}")
        object.__setattr__(self, "q", q)

    @property
    def N(self) -> int:
        return self.q.size


def weight_vector(q: Union[EnsembleWeight, np.ndarray], n: Optional[int] = None) -> np.ndarray:
    """Coerce q to a validated plain weight vector of length n (if given)."""
    if not isinstance(q, EnsembleWeight):
        q = EnsembleWeight(np.asarray(q, dtype=float))
    if n is not None and q.N != n:
        raise ValueError(f"weight has {q.N} entries, expected {n}")
    return q.q


@dataclass(frozen=True)
class Decomposition:
    """Transformation pair and decomposed system matrices for one basis.

    ``T`` maps ensemble coordinates to (xi_o, xi_obar); ``Tinv`` maps
    back.  ``coupling`` is the 2 x 2(N-1) block feeding the observable
    state into the unobservable dynamics; it is exactly zero for every
    weight basis.  ``Vplus`` is present only for weight bases (it is
    what makes input expansion well defined).  Treat instances as
    immutable values.
    """

    N: int
    tau: float
    q: Optional[np.ndarray]       # weight vector, None for a general basis
    V: np.ndarray                 # (N-1) x N relative measurement matrix
    Vplus: Optional[np.ndarray]   # N x (N-1) generalized inverse of V
    Wbar: np.ndarray              # 2 x 2N rows defining the unobservable coordinates
    T: np.ndarray                 # 2N x 2N forward transform [I2 kron V; Ubar]
    Tinv: np.ndarray              # 2N x 2N inverse transform [U, I2 kron 1]
    U: np.ndarray                 # 2N x 2(N-1)
    Ubar: np.ndarray              # 2 x 2N
    A: np.ndarray                 # 2 x 2 single-clock transition
    B: np.ndarray                 # (2,) single-clock input vector
    Ao: np.ndarray                # 2(N-1) x 2(N-1) observable transition
    Bo: np.ndarray                # 2(N-1) x (N-1) observable input map
    Co: np.ndarray                # (N-1) x 2(N-1) observable output map
    coupling: np.ndarray          # 2 x 2(N-1) block Ubar bigA U
    Bu_o: np.ndarray              # 2(N-1) x N physical input into the observable part
    Bu_obar: np.ndarray           # 2 x N physical input into the unobservable part
    Qo: np.ndarray                # 2(N-1) x 2(N-1) observable process covariance
    Qbo: np.ndarray               # 2 x 2(N-1) cross process covariance

    @property
    def is_weight_basis(self) -> bool:
        return self.q is not None


def generalized_inverse(V: np.ndarray, q: Union[EnsembleWeight, np.ndarray]) -> np.ndarray:
    """Right inverse of V whose columns carry zero q-weighted mean.

    Solves the stacked nonsingular system [V; q^T] Vplus = [I; 0], which
    enforces both defining identities V Vplus = I and q^T Vplus = 0 at
    once.  When V is the star difference form, the analytical expression
    (identity over -q row pattern, zero-padded) is returned instead so
    that entries which should vanish are exact zeros; the solve is kept
    as a cross-check.

    Parameters
    ----------
    V : (N-1) x N relative measurement matrix (rows sum to zero).
    q : weight vector with q^T 1 = 1.

    Returns
    -------
    Vplus : N x (N-1) array.
    """
    V = np.asarray(V, dtype=float)
    qv = weight_vector(q)
    N = qv.size
    if V.shape != (N - 1, N):
        raise ValueError(f"V must have shape ({N - 1}, {N}), got {V.shape}")

    stacked = np.vstack([V, qv[None, :]])
    rhs = np.vstack([np.eye(N - 1), np.zeros((1, N - 1))])
    try:
        solved = np.linalg.solve(stacked, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            "stacked system [V; q^T] is singular; this weight cannot "
            "complement the kernel of V"
        ) from exc

    vplus = solved
    if N >= 2:
        star = np.hstack([np.eye(N - 1), -np.ones((N - 1, 1))])
        if np.array_equal(V, star):
            # every row repeats -q_1..-q_{N-1}; rows 1..N-1 add the identity
            exact = rhs - np.outer(np.ones(N), qv[:-1])
            scale = max(1.0, float(np.max(np.abs(exact))))
            if np.max(np.abs(exact - solved)) > 1e-8 * scale:
                raise NumericalError(
                    "analytical and solved generalized inverses disagree; "
                    "the weight is too ill-conditioned for this basis"
                )
            vplus = exact

    scale = max(1.0, float(np.max(np.abs(vplus))))
    res_v = np.max(np.abs(V @ vplus - np.eye(N - 1)))
    res_q = np.max(np.abs(qv @ vplus))
    if res_v > _IDENTITY_TOL * scale or res_q > _IDENTITY_TOL * scale:
        raise NumericalError(
            f"generalized inverse failed its defining identities "
            f"(residuals {res_v:.3e}, {res_q:.3e})"
        )
    return vplus


def decompose(
    model: EnsembleModel,
    basis: Union[EnsembleWeight, np.ndarray],
) -> Decomposition:
    """Build the observable canonical decomposition for one basis.

    ``basis`` is either a weight vector / :class:`EnsembleWeight` (the
    EEM family) or a general 2 x 2N array whose rows define the
    unobservable coordinates.  A general basis must have full row rank,
    Wbar (I2 kron 1) nonsingular, and a kernel that complements the
    unobservable subspace; violations raise ``ValueError`` naming the
    condition.
    """
    N = model.N
    n_obs = 2 * (N - 1)
    V = model.meas.V
    kIV = np.kron(np.eye(2), V)
    ones_col = np.kron(np.eye(2), np.ones((N, 1)))

    basis_arr = basis.q if isinstance(basis, EnsembleWeight) else np.asarray(basis, dtype=float)
    if basis_arr.ndim == 1:
        qv = weight_vector(basis_arr, N)
        vplus = generalized_inverse(V, qv)
        ubar = np.kron(np.eye(2), qv[None, :])
        wbar = ubar
        u_mat = np.kron(np.eye(2), vplus)
        # A kron (q^T Vplus) vanishes identically for every weight basis
        coupling = np.zeros((2, n_obs))
    elif basis_arr.shape == (2, 2 * N):
        qv = None
        vplus = None
        wbar = basis_arr
        gram = wbar @ ones_col
        try:
            ubar = np.linalg.solve(gram, wbar)
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "Wbar (I2 kron 1) is singular; the basis rows do not see "
                "the unobservable subspace"
            ) from exc
        kernel = null_space(wbar)
        if kernel.shape[1] != n_obs:
            raise ValueError(
                f"Wbar must have full row rank 2; its kernel has dimension "
                f"{kernel.shape[1]}, expected {n_obs}"
            )
        g = kIV @ kernel
        try:
            u_mat = np.linalg.solve(g.T, kernel.T).T
        except np.linalg.LinAlgError as exc:
            raise ValueError(
                "ker Wbar does not complement the unobservable subspace; "
                "the direct-sum condition fails"
            ) from exc
        coupling = ubar @ model.bigA @ u_mat
    else:
        raise ValueError(
            f"basis must be a length-{N} weight or a (2, {2 * N}) array, "
            f"got shape {basis_arr.shape}"
        )

    t_fwd = np.vstack([kIV, ubar])
    t_inv = np.hstack([u_mat, ones_col])
    resid = np.max(np.abs(t_fwd @ t_inv - np.eye(2 * N)))
    if resid > _IDENTITY_TOL:
        raise NumericalError(
            f"transform pair failed T Tinv = I (max residual {resid:.3e})"
        )

    clock = model.clock
    eye_o = np.eye(N - 1)
    return Decomposition(
        N=N,
        tau=model.tau,
        q=qv,
        V=V,
        Vplus=vplus,
        Wbar=wbar,
        T=t_fwd,
        Tinv=t_inv,
        U=u_mat,
        Ubar=ubar,
        A=clock.A,
        B=clock.B,
        Ao=np.kron(clock.A, eye_o),
        Bo=np.kron(clock.B.reshape(2, 1), eye_o),
        Co=np.kron(clock.C[None, :], eye_o),
        coupling=coupling,
        Bu_o=np.kron(clock.B.reshape(2, 1), V),
        Bu_obar=ubar @ model.bigB,
        Qo=kIV @ model.bigQ @ kIV.T,
        Qbo=ubar @ model.bigQ @ kIV.T,
    )


def project_state(x: np.ndarray, d: Decomposition) -> Tuple[np.ndarray, np.ndarray]:
    """Split ensemble coordinates into (xi_o, xi_obar).

    Accepts a single state of shape (2N,) or a stacked series with the
    state on the last axis.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2 * d.N:
        raise ValueError(f"state must have last dimension {2 * d.N}, got {x.shape}")
    xi = x @ d.T.T
    n_obs = 2 * (d.N - 1)
    return xi[..., :n_obs], xi[..., n_obs:]


def reconstruct_state(xi_o: np.ndarray, xi_obar: np.ndarray, d: Decomposition) -> np.ndarray:
    """Inverse of :func:`project_state`: x = U xi_o + (I2 kron 1) xi_obar."""
    xi_o = np.asarray(xi_o, dtype=float)
    xi_obar = np.asarray(xi_obar, dtype=float)
    n_obs = 2 * (d.N - 1)
    if xi_o.shape[-1] != n_obs or xi_obar.shape[-1] != 2:
        raise ValueError(
            f"expected last dimensions ({n_obs},) and (2,), got "
            f"{xi_o.shape} and {xi_obar.shape}"
        )
    return np.concatenate([xi_o, xi_obar], axis=-1) @ d.Tinv.T


def expand_input(omega_o: np.ndarray, omega_obar: float, d: Decomposition) -> np.ndarray:
    """Map decomposed inputs to per-clock inputs: u = Vplus omega_o + 1 omega_obar.

    Only defined for weight bases.  For the steering weight q = e_N the
    last row of Vplus is exactly zero, so u_N inherits omega_obar
    bit-for-bit (and is exactly zero whenever omega_obar is).
    """
    if d.Vplus is None:
        raise ValueError("input expansion requires a weight basis, not a general Wbar")
    omega_o = np.asarray(omega_o, dtype=float)
    if omega_o.shape != (d.N - 1,):
        raise ValueError(f"omega_o must have shape ({d.N - 1},), got {omega_o.shape}")
    return d.Vplus @ omega_o + float(omega_obar)
