"""Forward simulation with optional propagation of output sensitivities.

The core routine steps many independent intervals in lockstep (one batch
row per interval), which is what makes multiple-shooting and
multi-step-ahead cost evaluations cheap.  The per-step recursion for the
sensitivities is

    D[k] = A_k D[k-1] + [B_k | 0],      D[start] = [0 | I]
    J[k] = C_k D[k]   + [F_k | 0]

with columns ordered (theta, x0); A_k, B_k are evaluated at the state
entering step k and C_k, F_k at the state leaving it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import RegressorWindow, StateSpaceModel, regressor_matrices

_STATE_LIMIT = 1e150


class DivergenceError(RuntimeError):
    """A trajectory left the representable range; carries the 1-based step."""

    def __init__(self, step: int):
        super().__init__(f"trajectory diverged at step {step}")
        self.step = step


@dataclass
class SensitivityTrace:
    """Per-step states, predictions and Jacobians over one interval."""

    start: int
    end: int
    states: np.ndarray        # (T, N_x)
    predictions: np.ndarray   # (T, N_out)
    state_sens: np.ndarray    # (T, N_x, N_theta + N_x)
    output_sens: np.ndarray   # (T, N_out, N_theta + N_x)


@dataclass
class BatchRollout:
    """Lockstep rollout of B intervals with possibly unequal lengths."""

    starts: np.ndarray        # (B,)
    lengths: np.ndarray       # (B,)
    states: np.ndarray        # (B, T, N_x); rows past an interval's end are frozen
    predictions: np.ndarray   # (B, T, N_out)
    output_sens: np.ndarray | None       # (B, T, N_out, nc)
    state_sens: np.ndarray | None        # (B, T, N_x, nc), only when requested
    end_states: np.ndarray    # (B, N_x)
    end_state_sens: np.ndarray | None    # (B, N_x, nc)
    valid: np.ndarray         # (B, T) bool
    diverged: np.ndarray      # (B,) bool
    divergence_step: np.ndarray          # (B,) int, -1 when finite

    @property
    def any_diverged(self) -> bool:
        return bool(self.diverged.any())


def run_intervals(model: StateSpaceModel, theta, x0, zy, zu, starts, lengths,
                  with_sens: bool, store_state_sens: bool = False) -> BatchRollout:
    """Roll out B intervals in lockstep.

    ``x0`` is (B, N_x); interval i covers times starts[i]+1 ..
    starts[i]+lengths[i], reading regressor rows from (zy, zu).
    Diverged intervals freeze in place and are flagged rather than
    raising, so one bad interval cannot poison the batch.
    """
    theta = np.asarray(theta, dtype=float)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    starts = np.asarray(starts, dtype=int)
    lengths = np.asarray(lengths, dtype=int)
    b = x0.shape[0]
    nx, nth, nout = model.state_dim, model.theta_dim, model.output_dim
    nc = nth + nx
    t_max = int(lengths.max()) if lengths.size else 0

    states = np.zeros((b, t_max, nx))
    preds = np.zeros((b, t_max, nout))
    jout = np.zeros((b, t_max, nout, nc)) if with_sens else None
    dout = np.zeros((b, t_max, nx, nc)) if (with_sens and store_state_sens) else None
    diverged = np.zeros(b, dtype=bool)
    div_step = np.full(b, -1, dtype=int)

    x = x0.copy()
    end_states = x0.copy()
    if with_sens:
        d = np.zeros((b, nx, nc))
        d[:, :, nth:] = np.eye(nx)[None, :, :]
        end_d = d.copy()
    else:
        d = end_d = None

    # rows of (zy, zu) read by every interval at every step, precomputed
    row_table = np.clip(starts[None, :] + np.arange(t_max)[:, None],
                        0, max(zy.shape[0] - 1, 0))
    uniform = bool((lengths == t_max).all()) if lengths.size else True
    clean = True          # no interval has diverged yet

    with np.errstate(invalid="ignore", over="ignore"):
        for t in range(1, t_max + 1):
            rows = row_table[t - 1]
            z = RegressorWindow(zy[rows], zu[rows])
            x_prev = x
            x_new = model.transition(x_prev, z, theta)
            bad = ~(np.abs(x_new).max(axis=1, initial=0.0) <= _STATE_LIMIT)
            active = None
            if not (uniform and clean):
                active = (t <= lengths) & ~diverged
            if bad.any():
                newly = bad if active is None else (active & bad)
                if newly.any():
                    diverged |= newly
                    div_step[newly] = t
                    clean = False
                    active = (t <= lengths) & ~diverged
            if active is None:
                x = x_new
            else:
                x = np.where(active[:, None], x_new, x_prev)
            if with_sens:
                a_mat, b_mat = model.transition_jacobians(x_prev, z, theta)
                d_new = a_mat @ d
                d_new[:, :, :nth] += b_mat
                d = d_new if active is None else np.where(
                    active[:, None, None], d_new, d)
                if store_state_sens:
                    dout[:, t - 1] = d
            yhat = model.output(x, z, theta)
            states[:, t - 1, :] = x
            preds[:, t - 1, :] = yhat if active is None else np.where(
                active[:, None], yhat, 0.0)
            if with_sens:
                c_mat, f_mat = model.output_jacobians(x, z, theta)
                j = c_mat @ d
                j[:, :, :nth] += f_mat
                if active is not None:
                    j = np.where(active[:, None, None], j, 0.0)
                jout[:, t - 1] = j
            if t == t_max and uniform and clean:
                end_states = x.copy()
                if with_sens:
                    end_d = d.copy()
            else:
                done = (t == lengths) & ~diverged
                if done.any():
                    end_states[done] = x[done]
                    if with_sens:
                        end_d[done] = d[done]

    if t_max:
        step_idx = np.arange(1, t_max + 1)[None, :]
        valid = step_idx <= lengths[:, None]
        valid &= ~(diverged[:, None] & (step_idx >= np.where(div_step < 0, t_max + 1, div_step)[:, None]))
    else:
        valid = np.zeros((b, 0), dtype=bool)

    return BatchRollout(starts, lengths, states, preds, jout, dout, end_states,
                        end_d, valid, diverged, div_step)


def simulate(model: StateSpaceModel, x0, dataset, start: int, end: int, theta):
    """Simulate one interval, raising DivergenceError on overflow.

    Returns (states, predictions) for times start+1..end.
    """
    if end < start:
        raise ValueError("end must be >= start")
    zy, zu = regressor_matrices(model, dataset)
    roll = run_intervals(model, theta, np.asarray(x0, float)[None, :], zy, zu,
                         np.array([start]), np.array([end - start]), with_sens=False)
    if roll.diverged[0]:
        raise DivergenceError(int(roll.divergence_step[0]))
    return roll.states[0], roll.predictions[0]


def simulate_with_sensitivities(model: StateSpaceModel, x0, dataset, start: int,
                                end: int, theta) -> SensitivityTrace:
    """Simulate one interval propagating D[k] and J[k] alongside."""
    if end < start:
        raise ValueError("end must be >= start")
    zy, zu = regressor_matrices(model, dataset)
    roll = run_intervals(model, theta, np.asarray(x0, float)[None, :], zy, zu,
                         np.array([start]), np.array([end - start]),
                         with_sens=True, store_state_sens=True)
    if roll.diverged[0]:
        raise DivergenceError(int(roll.divergence_step[0]))
    return SensitivityTrace(start, end, roll.states[0], roll.predictions[0],
                            roll.state_sens[0], roll.output_sens[0])
