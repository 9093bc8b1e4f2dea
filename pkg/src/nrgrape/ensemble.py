"""Robust-control objective averaged over an ensemble of offsets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fidelity import ObjectiveReport, evaluate_objective
from .spinops import ControlPulse, StateVector

__all__ = ["Ensemble", "uniform_band", "ensemble_objective"]


@dataclass(frozen=True)
class Ensemble:
    """Resonance offsets (rad/s) with nonnegative weights summing to one."""

    offsets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        offs = np.atleast_1d(np.asarray(self.offsets, float))
        w = np.atleast_1d(np.asarray(self.weights, float))
        if offs.shape != w.shape or offs.ndim != 1:
            raise ValueError("offsets and weights must be equal-length 1-D")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.offsets.shape[0]


def uniform_band(count: int, bandwidth_hz: float) -> Ensemble:
    """Equally spaced offsets spanning +-bandwidth/2 Hz, uniform weights.

    A single-member band sits at zero offset.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not (bandwidth_hz > 0):
        raise ValueError("bandwidth must be positive")
    if count == 1:
        hz = np.array([0.0])
    else:
        hz = np.linspace(-bandwidth_hz / 2.0, bandwidth_hz / 2.0, count)
    return Ensemble(2.0 * np.pi * hz, np.full(count, 1.0 / count))


def ensemble_objective(ens: Ensemble, pulse: ControlPulse, rho0: StateVector,
                       sigma: StateVector, want: str = "hessian",
                       method: str = "escalade",
                       hess_mode: str = "accelerated") -> ObjectiveReport:
    """Weighted average of the per-member fidelity/gradient/Hessian.

    Members are evaluated batched; reductions run in ascending member
    order (or numpy's pairwise scheme), so results are independent of
    thread configuration.
    """
    return evaluate_objective(
        ens.offsets, ens.weights, pulse, rho0, sigma,
        want=want, method=method, hess_mode=hess_mode,
    )
