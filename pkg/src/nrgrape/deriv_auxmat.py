"""Exact propagator derivatives from block-triangular auxiliary matrices.

Exponentiating

    [[A, C],        [[A, Cj, 0],
     [0, A]]   or    [0, A, Ck],
                     [0, 0, A]]

with A = -i L_n dt and C_k = -i L_k dt places the slice propagator on the
block diagonal, the first directional derivatives on the first
superdiagonal, and the ordered product integral in the top-right corner.

Two numerical points matter and are handled here:

* the control blocks are rescaled to O(1) before exponentiating (the
  extracted blocks scale back exactly); without this the tiny corner block
  drowns in the rounding noise of the O(1) diagonal blocks;
* for j != k the corner of a single exponential is the time-ordered half
  of the mixed derivative only. The symmetric mixed partial is the sum of
  both orderings, so :func:`auxmat_second` symmetrises internally (and is
  therefore invariant under swapping Cj and Ck, as the Hessian requires).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import AUX_PAIRS, aux_slice_derivatives
from .propagation import expm_oracle

__all__ = [
    "AuxBlocks",
    "DerivativeSet",
    "aux_blocks",
    "auxmat_first",
    "auxmat_second",
    "slice_derivative_set",
    "aux_slice_derivatives",
    "AUX_PAIRS",
]

_DIRECTIONS = ("x", "y", "z")


@dataclass(frozen=True)
class AuxBlocks:
    """Blocks of the second-order auxiliary matrix for one slice."""

    A: np.ndarray
    Cj: np.ndarray
    Ck: np.ndarray


@dataclass(frozen=True)
class DerivativeSet:
    """Propagator plus first and second directional derivatives.

    ``first`` maps a direction name to D_{k,n}; ``second`` maps an
    unordered direction pair (alphabetical key like "xy") to D2_{jk,n}.
    """

    P: np.ndarray
    first: dict
    second: dict

    def pair(self, j: str, k: str) -> np.ndarray:
        return self.second["".join(sorted(j + k))]


def aux_blocks(cx: float, cy: float, cz: float, offset: float, dt: float,
               generators, j: str, k: str) -> AuxBlocks:
    """Assemble A = -i L_n dt and the two control direction blocks."""
    gen = {"x": generators.Lx, "y": generators.Ly, "z": generators.Lz}
    L = cx * gen["x"] + cy * gen["y"] + (cz + offset) * gen["z"]
    return AuxBlocks(
        A=-1j * L * dt, Cj=-1j * gen[j] * dt, Ck=-1j * gen[k] * dt
    )


def _block_scale(c: np.ndarray) -> float:
    nrm = float(np.abs(c).sum(axis=-2).max())
    return 1.0 if nrm == 0.0 else 1.0 / nrm


def auxmat_first(A: np.ndarray, Ck: np.ndarray):
    """Propagator and first directional derivative from one 6x6 exponential.

    Returns ``(P, D)`` with P the diagonal block and D the derivative of
    exp(A) in direction Ck.
    """
    A = np.asarray(A, dtype=complex)
    Ck = np.asarray(Ck, dtype=complex)
    s = _block_scale(Ck)
    n = A.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    big[:n, :n] = A
    big[n:, n:] = A
    big[:n, n:] = Ck * s
    e = expm_oracle(big)
    return e[:n, :n], e[:n, n:] / s


def _ordered_corner(A: np.ndarray, C1: np.ndarray, C2: np.ndarray):
    """One 9x9 exponential; returns (P, D1, D2first, corner)."""
    n = A.shape[0]
    s1 = _block_scale(C1)
    s2 = _block_scale(C2)
    big = np.zeros((3 * n, 3 * n), dtype=complex)
    big[:n, :n] = A
    big[n:2 * n, n:2 * n] = A
    big[2 * n:, 2 * n:] = A
    big[:n, n:2 * n] = C1 * s1
    big[n:2 * n, 2 * n:] = C2 * s2
    e = expm_oracle(big)
    return (
        e[:n, :n],
        e[:n, n:2 * n] / s1,
        e[n:2 * n, 2 * n:] / s2,
        e[:n, 2 * n:] / (s1 * s2),
    )


def auxmat_second(A: np.ndarray, Cj: np.ndarray, Ck: np.ndarray) -> DerivativeSet:
    """Propagator with first and second derivatives along two directions.

    The corner of the (Cj, Ck)-ordered exponential is half the
    time-ordered contribution; the mixed partial sums both orderings, so
    the result is symmetric under Cj <-> Ck by construction.
    """
    A = np.asarray(A, dtype=complex)
    Cj = np.asarray(Cj, dtype=complex)
    Ck = np.asarray(Ck, dtype=complex)
    P, Dj, Dk, corner_jk = _ordered_corner(A, Cj, Ck)
    _, _, _, corner_kj = _ordered_corner(A, Ck, Cj)
    d2 = corner_jk + corner_kj
    return DerivativeSet(P=P, first={"j": Dj, "k": Dk}, second={"jk": d2})


def slice_derivative_set(cx: float, cy: float, cz: float, offset: float,
                         dt: float, generators) -> DerivativeSet:
    """Full auxiliary-matrix derivative set of one slice.

    All three first derivatives and the six unique second derivatives,
    keyed by direction names.
    """
    x = np.array([cx])
    y = np.array([cy])
    z = np.array([cz + offset])
    P, D, D2 = aux_slice_derivatives(x, y, z, dt, order=2)
    first = {name: D[0, i] for i, name in enumerate(_DIRECTIONS)}
    second = {}
    for p, (j, k) in enumerate(AUX_PAIRS):
        key = "".join(sorted(_DIRECTIONS[j] + _DIRECTIONS[k]))
        second[key] = D2[0, p]
    return DerivativeSet(P=P[0], first=first, second=second)
