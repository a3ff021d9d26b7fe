"""Adaptive-step gradient descent shared by the linear and kernel trainers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

# (params, batch, need_grad) -> (objective, gradient, number of exactly-zero hinge margins)
Problem = Callable[[np.ndarray, object, bool], "tuple[float, np.ndarray, int]"]


@dataclass(frozen=True)
class TrainerConfig:
    """Hyper-parameters for both trainers.

    ``n_pos``/``n_neg`` are per-iteration pair counts, clamped to what the
    label set can supply.  ``stop_tolerance`` is relative to
    ``max(1, |objective|)``.
    """

    lam: float = 1.0
    max_iters: int = 70
    initial_step: float = 1.0
    grow_factor: float = 1.2
    shrink_factor: float = 0.5
    stop_tolerance: float = 1e-6
    perturbation_scale: float = 1e-4
    n_pos: int = 1000
    n_neg: int = 1000
    include_diagonal: bool = True
    resample: bool = True
    augment_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")
        if not self.grow_factor > 1:
            raise ValueError("grow_factor must be > 1")
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink_factor must be in (0, 1)")
        if not self.stop_tolerance > 0:
            raise ValueError("stop_tolerance must be > 0")
        if not self.perturbation_scale > 0:
            raise ValueError("perturbation_scale must be > 0")
        if self.n_pos < 0 or self.n_neg < 0:
            raise ValueError("pair counts must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Step:
    iteration: int
    gamma: float
    objective: float
    trial_objective: float
    accepted: bool
    perturbed: bool


@dataclass
class Trace:
    steps: list = field(default_factory=list)
    converged: bool = False

    @property
    def accepted_objectives(self) -> list:
        return [s.trial_objective for s in self.steps if s.accepted]


def subspace_rng(seed: int, p: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(p,)))


def random_direction(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    v = rng.standard_normal(size)
    norm = np.linalg.norm(v)
    while norm == 0:
        v = rng.standard_normal(size)
        norm = np.linalg.norm(v)
    return v * (scale / norm)


def minimize(
    params: np.ndarray,
    problem: Problem,
    draw_batch: Callable[[], object],
    cfg: TrainerConfig,
    rng: np.random.Generator,
    trace: Optional[Trace] = None,
) -> np.ndarray:
    """Run the adaptive schedule and return the final parameters.

    A trial step is accepted when it does not increase the objective on
    the current batch; the step length then grows by ``grow_factor``.
    Otherwise the step is discarded, the step length shrinks by
    ``shrink_factor`` and the same batch is retried.  A fresh batch is
    drawn after each accepted step when ``cfg.resample`` is set.
    """
    gamma = cfg.initial_step
    batch = draw_batch()
    w = np.array(params, dtype=np.float64)
    for t in range(cfg.max_iters):
        obj, grad, n_zero = problem(w, batch, True)
        perturbed = False
        if n_zero:
            # a hinge sits exactly on its kink: nudge off it
            w = w + random_direction(rng, w.size, cfg.perturbation_scale)
            obj, grad, _ = problem(w, batch, True)
            perturbed = True
        trial = w - gamma * grad
        trial_obj = problem(trial, batch, False)[0]
        accepted = bool(np.isfinite(trial_obj) and trial_obj <= obj)
        if trace is not None:
            trace.steps.append(Step(t, gamma, obj, trial_obj, accepted, perturbed))
        if accepted:
            w = trial
            gamma *= cfg.grow_factor
            if abs(obj - trial_obj) < cfg.stop_tolerance * max(1.0, abs(obj)):
                if trace is not None:
                    trace.converged = True
                break
            if cfg.resample:
                batch = draw_batch()
        else:
            gamma *= cfg.shrink_factor
    return w
