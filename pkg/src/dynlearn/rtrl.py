"""Forward-mode online learning of dynamical systems.

The learner carries (s_t, J_t, theta_t) and advances all three each step:

    s_t     = T_t(s_{t-1}, theta_{t-1})
    J_t     = dT_t/ds . J_{t-1} + dT_t/dtheta  (+ E_t when an error
              injector supplies randomized-approximation noise)
    v_t     = U_t(dl_t/ds . J_t, s_t, theta_{t-1})
    theta_t = Phi_t(theta_{t-1}, eta_t * v_t)

with the Jacobians of T_t evaluated at (s_{t-1}, theta_{t-1}). The update
ordering matters: the state and Jacobian both use theta_{t-1}, and only
then is the parameter moved. With eta_t = 0 the parameter stays frozen
and J_t is the exact Jacobian of the state with respect to the parameter,
which is what the open-loop helpers below compute.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ContractViolation, NumericOverflow, OVERFLOW_LIMIT, System
from .records import RecordBuilder, TrialRecord
from .schedules import StepSchedule

__all__ = [
    "LearnerState",
    "rtrl_step",
    "open_loop_gradient",
    "open_loop_updates",
    "run_learning",
    "deviation",
]


@dataclass
class LearnerState:
    """Everything the learner maintains: time, state, Jacobian, parameter.

    aux is free-form storage for update-rule bookkeeping; the shipped
    rules keep their statistics inside theta itself (augmented
    parameters), so aux usually stays empty.
    """

    t: int
    s: np.ndarray
    J: np.ndarray
    theta: np.ndarray
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.J = np.atleast_2d(np.asarray(self.J, dtype=float))
        self.theta = np.asarray(self.theta, dtype=float)
        if self.J.shape != (len(self.s), len(self.theta)):
            raise ContractViolation(
                f"Jacobian shape {self.J.shape} inconsistent with dims ({len(self.s)}, {len(self.theta)})"
            )


def _guard(x, stage, t):
    # max(|x|) is NaN when any entry is NaN, so one reduction covers both
    # the overflow threshold and non-finite entries.
    m = np.abs(x).max()
    if not m <= OVERFLOW_LIMIT:
        raise NumericOverflow(stage, t)
    return x


def rtrl_step(sys: System, ls: LearnerState, eta_t: float, rule=None, phi=None,
              injector=None, rng=None) -> LearnerState:
    """Advance the learner by one step (see module docstring for order)."""
    if eta_t < 0:
        raise ContractViolation("step size must be >= 0")
    t = ls.t + 1
    jac_s = np.atleast_2d(sys.d_transition_ds(t, ls.s, ls.theta))
    jac_th = np.atleast_2d(sys.d_transition_dtheta(t, ls.s, ls.theta))
    s_new = _guard(np.asarray(sys.transition(t, ls.s, ls.theta), dtype=float), "transition", t)

    J_new = jac_s @ ls.J + jac_th
    if injector is not None:
        J_new = J_new + injector.next_error(t, ls.s, ls.theta, ls.J, jac_s, jac_th, rng)
    _guard(J_new, "jacobian", t)

    v = np.atleast_1d(sys.d_loss_ds(t, s_new)) @ J_new
    if rule is not None:
        v = rule.apply(t, v, s_new, ls.theta)
    _guard(v, "update-direction", t)

    w = eta_t * v
    theta_new = phi.apply(t, ls.theta, w) if phi is not None else ls.theta - w
    _guard(theta_new, "parameter", t)
    ls.aux["last_v_norm"] = float(np.linalg.norm(v))
    # Internal arrays already satisfy the LearnerState contract; skip the
    # dataclass re-validation in this hot path.
    out = LearnerState.__new__(LearnerState)
    out.t = t
    out.s = s_new
    out.J = J_new
    out.theta = np.asarray(theta_new, dtype=float)
    out.aux = ls.aux
    return out


def open_loop_updates(sys: System, rule, s0, theta, T: int) -> np.ndarray:
    """Update directions v_1..v_T at frozen theta, one forward pass.

    Row t-1 holds U_t(dl_t/ds . J_t, s_t, theta) with J_t propagated from
    J_0 = 0, which equals the rule applied to the exact gradient of the
    compound loss at time t.
    """
    theta = np.asarray(theta, dtype=float)
    s = np.asarray(s0, dtype=float)
    J = np.zeros((len(s), len(theta)))
    out = np.zeros((T, len(theta)))
    for t in range(1, T + 1):
        jac_s = np.atleast_2d(sys.d_transition_ds(t, s, theta))
        jac_th = np.atleast_2d(sys.d_transition_dtheta(t, s, theta))
        s = _guard(sys.transition(t, s, theta), "transition", t)
        J = jac_s @ J + jac_th
        v = np.atleast_1d(sys.d_loss_ds(t, s)) @ J
        out[t - 1] = rule.apply(t, v, s, theta) if rule is not None else v
    return out


def open_loop_gradient(sys: System, s0, theta, t: int) -> np.ndarray:
    """Exact d/dtheta of the compound loss at time t (frozen parameter)."""
    if t < 1:
        raise ContractViolation("open-loop gradient needs t >= 1")
    return open_loop_updates(sys, None, s0, theta, t)[t - 1]


def run_learning(sys: System, s0, theta0, J0, schedule: StepSchedule, rule=None,
                 phi=None, injector=None, T: int = 1, rng=None, theta_star=None,
                 dist_dims=None, record_every: int = 1, config_meta=None) -> TrialRecord:
    """Run T learning steps and record the trial.

    An overflow anywhere aborts the trial and records the abort time;
    divergence experiments treat that as a measurement, not a failure.
    theta_star (optional) is the reference for the recorded distances;
    dist_dims restricts the distance to the leading coordinates (useful
    when theta is augmented with preconditioner statistics).
    """
    if T < 1:
        raise ContractViolation("horizon T must be >= 1")
    theta0 = np.asarray(theta0, dtype=float)
    if J0 is None:
        J0 = np.zeros((len(np.atleast_1d(s0)), len(theta0)))
    ls = LearnerState(t=0, s=s0, J=J0, theta=theta0)
    if injector is not None:
        injector.reset()

    def dist(theta):
        if theta_star is None:
            return np.nan
        d = theta[:dist_dims] - np.asarray(theta_star, dtype=float)[:dist_dims]
        return float(np.linalg.norm(d))

    builder = RecordBuilder(config_meta)
    builder.add(0, dist(theta0), np.nan, np.nan)
    try:
        for t in range(1, T + 1):
            ls = rtrl_step(sys, ls, schedule.eta(t), rule, phi, injector, rng)
            if t % record_every == 0 or t == T:
                builder.add(t, dist(ls.theta), sys.loss(t, ls.s), ls.aux["last_v_norm"])
    except NumericOverflow as exc:
        builder.abort_t = exc.t
        builder.add(exc.t, dist(ls.theta), np.nan, np.nan)
    return builder.build(final_theta=ls.theta)


def deviation(sys: System, theta_anchor, states, t0: int, t1: int,
              schedule: StepSchedule, rule=None, phi=None) -> float:
    """Parameter-space deviation of a noisy run from the exact algorithm.

    `states` holds the noisy trajectory's maintained pairs (s_t, J_t) for
    t in [t0, t1] (states[k] belongs to time t0+k; LearnerState instances
    or (s, J) tuples both work). Two parameter sequences are rebuilt from
    theta_anchor at t0: one driven by the noisy pairs, and a regularized
    one whose pairs follow the exact recursion but consume the *noisy*
    sequence's parameters. The deviation is the distance between the two
    parameters at t1; it is zero iff the noise had no effect on the
    parameter by then.
    """
    if t1 < t0:
        raise ContractViolation("need t1 >= t0")
    if len(states) < t1 - t0 + 1:
        raise ContractViolation(f"states must cover [{t0}, {t1}] ({t1 - t0 + 1} entries)")

    def unpack(m):
        if isinstance(m, LearnerState):
            return m.s, m.J
        s, J = m
        return np.asarray(s, dtype=float), np.atleast_2d(np.asarray(J, dtype=float))

    theta = np.asarray(theta_anchor, dtype=float)
    theta_bar = theta.copy()
    s_bar, J_bar = unpack(states[0])
    s_bar, J_bar = s_bar.copy(), J_bar.copy()

    for t in range(t0 + 1, t1 + 1):
        eta = schedule.eta(t)
        s_noisy, J_noisy = unpack(states[t - t0])
        # Regularized pair: exact recursion driven by the noisy parameters.
        jac_s = np.atleast_2d(sys.d_transition_ds(t, s_bar, theta))
        jac_th = np.atleast_2d(sys.d_transition_dtheta(t, s_bar, theta))
        s_bar_new = sys.transition(t, s_bar, theta)
        J_bar = jac_s @ J_bar + jac_th
        s_bar = s_bar_new

        v = np.atleast_1d(sys.d_loss_ds(t, s_noisy)) @ J_noisy
        v_bar = np.atleast_1d(sys.d_loss_ds(t, s_bar)) @ J_bar
        if rule is not None:
            v = rule.apply(t, v, s_noisy, theta)
            v_bar = rule.apply(t, v_bar, s_bar, theta)
        theta_new = phi.apply(t, theta, eta * v) if phi is not None else theta - eta * v
        theta_bar = phi.apply(t, theta_bar, eta * v_bar) if phi is not None else theta_bar - eta * v_bar
        theta = theta_new

    return float(np.linalg.norm(theta - theta_bar))
