"""Fit results, loss trajectories, and the improvement stop criterion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import FactorModel


@dataclass
class FitResult:
    """Solver output: final model plus the recorded loss trajectory.

    ``losses[h]`` is the loss after h iterations (index 0 is the
    initialization); ``wall_times[h]`` the cumulative seconds since the
    solver started. Gradient solvers record per epoch instead of per
    iteration. ``plan_seeds`` is populated by the sketched/stochastic
    solvers (one seed per iteration).
    """

    model: FactorModel
    losses: np.ndarray
    wall_times: np.ndarray
    stopped_early: bool = False
    iterations: int = 0
    plan_seeds: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def stop_triggered(losses, eps: float, window: int) -> bool:
    """Improvement-based stop: the last ``window`` steps each improved by
    less than ``eps``. Disabled for negative ``eps``."""
    if eps < 0 or window < 1 or len(losses) < window + 1:
        return False
    recent = losses[-(window + 1):]
    return all(recent[g + 1] > recent[g] - eps for g in range(window))
