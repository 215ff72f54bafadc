"""Truncated backpropagation through time with growing intervals.

The horizon is split into intervals (t_k, t_{k+1}]. Within an interval
the parameter is frozen; at the interval end one backward (adjoint) pass
produces the summed gradient of all interval losses with respect to the
frozen parameter, and the parameter takes a single step with stepsize
eta_{t_{k+1}}. Fixed-length intervals bias the gradient (long-range
influence is cut); letting the length grow like t^A removes the bias
while keeping the per-interval step small enough, provided
max(a, gamma_loss) < A < b - 2*gamma_loss.

On any interval the backward pass computes exactly what forward-mode
Jacobian propagation restarted at (t_k, s_{t_k}) with J reset to zero
computes; the equivalence is exercised directly by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .dynamics import ConfigurationError, ContractViolation, NumericOverflow, System
from .dynamics import OVERFLOW_LIMIT
from .records import RecordBuilder, TrialRecord
from .schedules import ExponentProfile, StepSchedule, validate_exponents

__all__ = ["TruncationSchedule", "BpttCounters", "bptt_interval_gradient", "run_tbptt"]


@dataclass
class TruncationSchedule:
    """Interval boundaries t_0=0, t_1=1, t_{k+1} = t_k + ceil(t_k^A).

    ceil keeps the boundaries integral and strictly increasing; the
    asymptotics t_k^(1-A) ~ (1-A) k are unaffected. A fixed-length
    override exists for the divergence experiments (biased on purpose).
    """

    A: float | None = None
    fixed_length: int | None = None

    def __post_init__(self):
        if (self.A is None) == (self.fixed_length is None):
            raise ConfigurationError("specify exactly one of A or fixed_length")
        if self.A is not None and not 0.0 < self.A < 1.0:
            raise ConfigurationError("truncation exponent A must lie in (0, 1)")
        if self.fixed_length is not None and self.fixed_length < 1:
            raise ConfigurationError("fixed interval length must be >= 1")

    @classmethod
    def growing(cls, A: float) -> "TruncationSchedule":
        return cls(A=A)

    @classmethod
    def fixed(cls, L: int) -> "TruncationSchedule":
        return cls(fixed_length=L)

    def boundaries(self):
        """Yield t_0, t_1, t_2, ... lazily."""
        t = 0
        yield t
        if self.fixed_length is not None:
            while True:
                t += self.fixed_length
                yield t
        else:
            t = 1
            yield t
            while True:
                t += ceil(t**self.A)
                yield t

    def boundaries_up_to(self, T: int) -> np.ndarray:
        """All boundaries <= T, ending with T itself (last interval clipped)."""
        out = []
        for t in self.boundaries():
            if t >= T:
                break
            out.append(t)
        out.append(T)
        return np.array(out, dtype=int)


@dataclass
class BpttCounters:
    """Instrumentation for the backward pass cost contract."""

    forward_steps: int = 0
    backward_steps: int = 0


def _interval_pass(sys, s_start, theta, t_start, t_end, counters=None):
    """Forward pass storing states, then one adjoint sweep. Returns
    (summed gradient, stored states)."""
    theta = np.asarray(theta, dtype=float)
    states = [np.asarray(s_start, dtype=float)]
    for t in range(t_start + 1, t_end + 1):
        s_new = sys.transition(t, states[-1], theta)
        if not np.all(np.isfinite(s_new)) or np.any(np.abs(s_new) > OVERFLOW_LIMIT):
            raise NumericOverflow("transition", t)
        states.append(s_new)
        if counters is not None:
            counters.forward_steps += 1

    grad = np.zeros(len(theta))
    lam = None  # adjoint row vector, not yet allocated
    for t in range(t_end, t_start, -1):
        s_t = states[t - t_start]
        s_prev = states[t - t_start - 1]
        if lam is None:
            lam = np.atleast_1d(sys.d_loss_ds(t, s_t)).astype(float)
        else:
            lam = np.atleast_1d(sys.d_loss_ds(t, s_t)) + lam @ np.atleast_2d(
                sys.d_transition_ds(t + 1, s_t, theta)
            )
        grad += lam @ np.atleast_2d(sys.d_transition_dtheta(t, s_prev, theta))
        if counters is not None:
            counters.backward_steps += 1
    return grad, states


def bptt_interval_gradient(sys: System, s_start, theta, t_start: int, t_end: int,
                           counters: BpttCounters | None = None) -> np.ndarray:
    """Summed gradient over (t_start, t_end] at frozen theta.

    One forward pass stores the interval states; one backward pass
    accumulates the adjoint

        lam_t = dl_t/ds(s_t) + lam_{t+1} . dT_{t+1}/ds(s_t, theta)

    (lam zero beyond t_end) and returns sum_t lam_t . dT_t/dtheta. Each
    stored state is touched exactly once backward.
    """
    if t_end <= t_start:
        raise ContractViolation("interval must satisfy t_end > t_start")
    grad, _ = _interval_pass(sys, s_start, theta, t_start, t_end, counters)
    return grad


def run_tbptt(sys: System, s0, theta0, schedule: StepSchedule,
              trunc: TruncationSchedule, T: int, reset_state=None, phi=None,
              update_mode: str = "aggregate", theta_star=None, dist_dims=None,
              profile: ExponentProfile | None = None, force: bool = False,
              config_meta=None) -> TrialRecord:
    """Interval-wise learning; records one row per interval boundary.

    reset_state=None carries the state across boundaries; otherwise the
    state is reset to the given value at the start of every interval (the
    Jacobian information is implicitly reset by construction).
    update_mode "aggregate" applies one subtraction with the summed
    gradient (through phi when given); "per_step" applies phi once per
    interval step with the individual gradient pieces, which differs at
    second order only. When an exponent profile is supplied the (A, b)
    relation is validated up front; force=True suppresses that check for
    deliberate failure experiments.
    """
    if update_mode not in ("aggregate", "per_step"):
        raise ConfigurationError(f"unknown update mode {update_mode!r}")
    if profile is not None and not force:
        ok, violations = validate_exponents(profile, schedule.b)
        if not ok:
            raise ConfigurationError("; ".join(violations))

    theta = np.asarray(theta0, dtype=float)
    s = np.asarray(s0, dtype=float)

    def dist(th):
        if theta_star is None:
            return np.nan
        return float(np.linalg.norm(th[:dist_dims] - np.asarray(theta_star, dtype=float)[:dist_dims]))

    builder = RecordBuilder(config_meta, with_intervals=True)
    builder.add(0, dist(theta), np.nan, np.nan, interval=0)
    bounds = trunc.boundaries_up_to(T)
    try:
        for k in range(len(bounds) - 1):
            t_lo, t_hi = int(bounds[k]), int(bounds[k + 1])
            if reset_state is not None:
                s = np.asarray(reset_state, dtype=float)
            eta = schedule.eta(t_hi)
            if update_mode == "aggregate":
                grad, states = _interval_pass(sys, s, theta, t_lo, t_hi)
                s = states[-1]
                w = eta * grad
                theta_new = phi.apply(t_hi, theta, w) if phi is not None else theta - w
            else:
                theta_new, grad, s = _per_step_update(sys, s, theta, t_lo, t_hi, eta, phi)
            if not np.all(np.isfinite(theta_new)) or np.any(np.abs(theta_new) > OVERFLOW_LIMIT):
                raise NumericOverflow("parameter", t_hi)
            theta = theta_new
            builder.add(t_hi, dist(theta), sys.loss(t_hi, s), float(np.linalg.norm(grad)), interval=k + 1)
    except NumericOverflow as exc:
        builder.abort_t = exc.t
        builder.add(exc.t, dist(theta), np.nan, np.nan, interval=k + 1)
    return builder.build(final_theta=theta)


def _per_step_update(sys, s_start, theta, t_lo, t_hi, eta, phi):
    """Apply phi per interval step using forward-propagated gradients."""
    p = len(theta)
    s = np.asarray(s_start, dtype=float)
    J = np.zeros((len(s), p))
    theta_new = theta.copy()
    total = np.zeros(p)
    for t in range(t_lo + 1, t_hi + 1):
        jac_s = np.atleast_2d(sys.d_transition_ds(t, s, theta))
        jac_th = np.atleast_2d(sys.d_transition_dtheta(t, s, theta))
        s = sys.transition(t, s, theta)
        if not np.all(np.isfinite(s)) or np.any(np.abs(s) > OVERFLOW_LIMIT):
            raise NumericOverflow("transition", t)
        J = jac_s @ J + jac_th
        v = np.atleast_1d(sys.d_loss_ds(t, s)) @ J
        total += v
        w = eta * v
        theta_new = phi.apply(t, theta_new, w) if phi is not None else theta_new - w
    return theta_new, total, s
