"""Matrix-exponential-free propagator derivatives (Lie-algebraic form).

For a slice generator L = x Lx + y Ly + z Lz the derivative of the
propagator P = exp(-i L dt) along a control direction is P times a linear
combination of the generators whose coefficients form the columns of

    M = I + dt*A(u) * S + dt^2*B(u) * S^2,      u = r dt,

where S is the skew-symmetric matrix of (x, y, z) and A, B are the
rotation-integral kernels A(u) = (1 - cos u)/u^2, B(u) = (u - sin u)/u^3
(M is the rotation-group Jacobi matrix of the exponential map). The
second-order coefficients are the closed-form partial derivatives

    dM/dj = j*dt^3*C(u) * S + dt*A(u) * dS/dj
          + j*dt^4*E(u) * S^2 + dt^2*B(u) * (S dS/dj + dS/dj S)

with C = A'(u)/u and E = B'(u)/u, obtained by differentiating M directly
(cf. the chain rule dr/dj = j/r). All four kernels have removable
singularities at u = 0 and are evaluated by series below u = 1/4.

Everything here is trigonometry and 3x3 products; no matrix exponential
is used (the dense-exponential route lives in deriv_auxmat and serves as
the cross-check oracle in the tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .propagation import wigner_propagators
from .spinops import standard_generators

__all__ = [
    "SkewS",
    "ThetaFirst",
    "ThetaSecond",
    "SigmaMatrix",
    "skew_matrix",
    "skew_derivative",
    "sigma_matrix",
    "theta_first",
    "theta_second",
    "escalade_first",
    "escalade_second",
    "esc_slice_derivatives",
]

_GEN = standard_generators()
_LSTACK = _GEN.stack()  # (3, 3, 3), direction-major

# dS/dx, dS/dy, dS/dz: constant two-entry patterns
_DS = np.zeros((3, 3, 3))
_DS[0, 1, 2] = 1.0
_DS[0, 2, 1] = -1.0
_DS[1, 0, 2] = -1.0
_DS[1, 2, 0] = 1.0
_DS[2, 0, 1] = 1.0
_DS[2, 1, 0] = -1.0

_DIR_INDEX = {"x": 0, "y": 1, "z": 2}
_SERIES_CUT = 0.25


@dataclass(frozen=True)
class SkewS:
    """Skew matrix of the slice coefficients with its constant gradients."""

    matrix: np.ndarray
    dS_dx: np.ndarray = _DS[0]
    dS_dy: np.ndarray = _DS[1]
    dS_dz: np.ndarray = _DS[2]


@dataclass(frozen=True)
class ThetaFirst:
    """First-derivative coefficient matrix M; columns are Theta_x,y,z."""

    M: np.ndarray

    def column(self, k: str) -> np.ndarray:
        return self.M[:, _DIR_INDEX[k]]

    def as_vec(self) -> np.ndarray:
        """vec[M], column-major; consecutive 3-segments are the columns."""
        return self.M.reshape(9, order="F")


@dataclass(frozen=True)
class ThetaSecond:
    """dM/dj for one direction j; column k is Theta_{jk}."""

    j: str
    dM: np.ndarray

    def column(self, k: str) -> np.ndarray:
        return self.dM[:, _DIR_INDEX[k]]


def skew_matrix(x, y, z) -> np.ndarray:
    """S such that S w = -(x, y, z) x w; its null vector is the axis."""
    x, y, z = np.broadcast_arrays(
        np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)
    )
    s = np.zeros(x.shape + (3, 3))
    s[..., 0, 1] = z
    s[..., 0, 2] = -y
    s[..., 1, 0] = -z
    s[..., 1, 2] = x
    s[..., 2, 0] = y
    s[..., 2, 1] = -x
    return s


def skew_derivative(j: str) -> np.ndarray:
    return _DS[_DIR_INDEX[j]]


def _kernels(u: np.ndarray):
    """A, B, C, E rotation kernels with series guards below u = 1/4."""
    u = np.asarray(u, float)
    u2 = u * u
    small = u < _SERIES_CUT
    ub = np.where(small, 1.0, u)  # safe denominator
    ub2 = ub * ub
    # direct forms (stable for u >= 1/4)
    sin_u = np.sin(ub)
    half = np.sin(0.5 * ub)
    one_m_cos = 2.0 * half * half
    A_dir = one_m_cos / ub2
    B_dir = (ub - sin_u) / (ub2 * ub)
    C_dir = (ub * sin_u - 2.0 * one_m_cos) / (ub2 * ub2)
    E_dir = (3.0 * sin_u - 2.0 * ub - ub * np.cos(ub)) / (ub2 * ub2 * ub)
    # series in u^2 (Horner)
    A_ser = 0.5 + u2 * (-1.0 / 24 + u2 * (1.0 / 720 + u2 * (-1.0 / 40320
            + u2 * (1.0 / 3628800 - u2 / 479001600))))
    B_ser = 1.0 / 6 + u2 * (-1.0 / 120 + u2 * (1.0 / 5040 + u2 * (-1.0 / 362880
            + u2 * (1.0 / 39916800 - u2 / 6227020800))))
    C_ser = -1.0 / 12 + u2 * (1.0 / 180 + u2 * (-1.0 / 6720 + u2 * (1.0 / 453600
            + u2 * (-1.0 / 47900160 + u2 / 7264857600))))
    E_ser = -1.0 / 60 + u2 * (1.0 / 1260 + u2 * (-1.0 / 60480 + u2 * (1.0 / 4989600
            + u2 * (-1.0 / 622702080 + u2 / 108972864000))))
    return (
        np.where(small, A_ser, A_dir),
        np.where(small, B_ser, B_dir),
        np.where(small, C_ser, C_dir),
        np.where(small, E_ser, E_dir),
    )


def theta_first(x: float, y: float, z: float, dt: float) -> ThetaFirst:
    """Coefficient matrix M for the first derivatives of one slice."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = np.sqrt(x * x + y * y + z * z)
    A, B, _, _ = _kernels(np.array(r * dt))
    S = skew_matrix(x, y, z)
    return ThetaFirst(np.eye(3) + (dt * A) * S + (dt * dt * B) * (S @ S))


def theta_second(j: str, x: float, y: float, z: float, dt: float) -> ThetaSecond:
    """dM/dj: second-derivative coefficients for direction j."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r = np.sqrt(x * x + y * y + z * z)
    A, B, C, E = _kernels(np.array(r * dt))
    S = skew_matrix(x, y, z)
    S2 = S @ S
    dS = skew_derivative(j)
    v = (x, y, z)[_DIR_INDEX[j]]
    dM = ((v * dt**3 * C) * S + (dt * A) * dS
          + (v * dt**4 * E) * S2 + (dt * dt * B) * (S @ dS + dS @ S))
    return ThetaSecond(j=j, dM=dM)


@dataclass(frozen=True)
class SigmaMatrix:
    """Columns vec[Cx], vec[Cy], vec[Cz] with C_k = -i L_k dt (9 x 3)."""

    matrix: np.ndarray
    dt: float


def sigma_matrix(dt: float) -> SigmaMatrix:
    cols = [(-1j * _LSTACK[k] * dt).reshape(9, order="F") for k in range(3)]
    return SigmaMatrix(np.stack(cols, axis=1), dt)


def _unvec(v: np.ndarray) -> np.ndarray:
    return v.reshape(3, 3, order="F")


def escalade_first(P: np.ndarray, sigma: SigmaMatrix, theta: ThetaFirst,
                   k: str) -> np.ndarray:
    """D_{k,n} = P unvec(Sigma Theta_k)."""
    return P @ _unvec(sigma.matrix @ theta.column(k))


def escalade_second(P: np.ndarray, sigma: SigmaMatrix,
                    theta_j: np.ndarray, theta_k: np.ndarray,
                    theta_jk: np.ndarray) -> np.ndarray:
    """D2_{jk,n} = P unvec(Sigma Theta_jk) + P unvec(Sigma Theta_j) unvec(Sigma Theta_k)."""
    wj = _unvec(sigma.matrix @ theta_j)
    wk = _unvec(sigma.matrix @ theta_k)
    wjk = _unvec(sigma.matrix @ theta_jk)
    return P @ wjk + P @ wj @ wk


# pair order shared with the auxiliary-matrix engine: xx, xy, xz, yy, yz, zz
_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def esc_slice_derivatives(x, y, z, dt, order):
    """Batched propagator derivatives for flat (B,) coefficient arrays.

    Same contract as :func:`nrgrape._kernels.aux_slice_derivatives`:
    returns (P, D, D2) with D (B, 3, 3, 3) direction-major and D2
    (B, 6, 3, 3) in pair order xx, xy, xz, yy, yz, zz (None for order 1).
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    r = np.sqrt(x * x + y * y + z * z)
    A, B, C, E = _kernels(r * dt)
    S = skew_matrix(x, y, z)
    S2 = S @ S
    eye = np.eye(3)
    f1 = (dt * A)[:, None, None]
    f2 = (dt * dt * B)[:, None, None]
    M = eye + f1 * S + f2 * S2
    P = wigner_propagators(x, y, z, dt)
    # W_k = -i dt sum_a M[a, k] L_a, stacked over k
    W = -1j * dt * np.einsum("bak,aij->bkij", M, _LSTACK)
    D = P[:, None] @ W
    if order < 2:
        return P, D, None
    g1 = (dt**3 * C)[:, None, None]
    g2 = (dt**4 * E)[:, None, None]
    v = np.stack([x, y, z], axis=1)  # (B, 3)
    # dM[b, j] = v_j g1 S + f1 dS_j + v_j g2 S^2 + f2 (S dS_j + dS_j S)
    SdS = np.einsum("bik,jkl->bjil", S, _DS)
    dSS = np.einsum("jik,bkl->bjil", _DS, S)
    dM = (v[:, :, None, None] * (g1[:, None] * S[:, None] + g2[:, None] * S2[:, None])
          + f1[:, None] * _DS[None]
          + f2[:, None] * (SdS + dSS))
    dW = -1j * dt * np.einsum("bjak,ail->bjkil", dM, _LSTACK)
    D2 = np.empty(x.shape + (6, 3, 3), dtype=complex)
    for p, (j, k) in enumerate(_PAIRS):
        D2[:, p] = P @ (dW[:, j, k] + W[:, j] @ W[:, k])
    return P, D, D2
