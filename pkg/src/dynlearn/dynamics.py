"""Parameterized dynamical systems, losses, and trajectory evaluation.

A system evolves a state s_t = T_t(s_{t-1}, theta) under a time-dependent
transition operator, and carries a per-step loss l_t(s_t). Data enters
through the time dependency of T_t and l_t (a system closes over its
dataset and sample-index sequence). Every concrete system supplies
analytic Jacobians of T_t and l_t; there is no autodiff fallback, only a
finite-difference checker used by the tests.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

__all__ = [
    "System",
    "ContractViolation",
    "NumericOverflow",
    "ConfigurationError",
    "LinearSystem",
    "NonRecurrentRegression",
    "RNNSystem",
    "MomentumSystem",
    "InfluenceBalancing",
    "TanhSystem",
    "ResetWrapper",
    "SquaredErrorLoss",
    "LinearCoefficientLoss",
    "make_example",
    "step",
    "run_trajectory",
    "compound_loss",
    "check_jacobians",
]

OVERFLOW_LIMIT = 1e12


class ContractViolation(ValueError):
    """Input violates a dimension or finiteness precondition."""


class NumericOverflow(FloatingPointError):
    """A computed quantity exceeded the overflow limit or is non-finite.

    Carries the stage name and time index; divergence experiments rely on
    catching this and recording the abort time as data.
    """

    def __init__(self, stage, t, detail=""):
        self.stage = stage
        self.t = t
        super().__init__(f"numeric overflow in {stage} at t={t}" + (f": {detail}" if detail else ""))


class ConfigurationError(ValueError):
    """Invalid construction parameters or experiment configuration."""


def _check_finite(x, stage, t):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > OVERFLOW_LIMIT):
        raise NumericOverflow(stage, t)
    return x


class System(ABC):
    """Behavioral interface of a parameterized dynamical system.

    Attributes:
        param_dim: dimension p of the parameter vector theta.

    State dimension may vary with t; `state_dim(t)` gives dim(S_t).
    `transition(t, s, theta)` maps S_{t-1} x Theta -> S_t, and the two
    transition Jacobians have shapes dim(S_t) x dim(S_{t-1}) and
    dim(S_t) x p. Losses are defined for t >= 1.
    """

    param_dim: int

    @abstractmethod
    def state_dim(self, t: int) -> int: ...

    @abstractmethod
    def transition(self, t: int, s: np.ndarray, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d_transition_ds(self, t: int, s: np.ndarray, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d_transition_dtheta(self, t: int, s: np.ndarray, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def loss(self, t: int, s: np.ndarray) -> float: ...

    @abstractmethod
    def d_loss_ds(self, t: int, s: np.ndarray) -> np.ndarray: ...


def step(sys: System, t: int, s: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """One application of the transition operator, with contract checks."""
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if s.shape != (sys.state_dim(t - 1),):
        raise ContractViolation(
            f"state has dim {s.shape} but system expects dim ({sys.state_dim(t - 1)},) at t-1={t - 1}"
        )
    if theta.shape != (sys.param_dim,):
        raise ContractViolation(f"parameter has shape {theta.shape}, expected ({sys.param_dim},)")
    if not np.all(np.isfinite(theta)):
        raise ContractViolation("parameter has non-finite entries")
    out = sys.transition(t, s, theta)
    return _check_finite(out, "transition", t)


def run_trajectory(sys: System, s0: np.ndarray, theta: np.ndarray, T: int) -> list[np.ndarray]:
    """States [s_0, ..., s_T] of the trajectory with constant parameter."""
    if T < 0:
        raise ContractViolation("horizon T must be >= 0")
    states = [np.asarray(s0, dtype=float)]
    for t in range(1, T + 1):
        states.append(step(sys, t, states[-1], theta))
    return states


def compound_loss(sys: System, s0: np.ndarray, theta: np.ndarray, t: int) -> float:
    """Loss at time t of the trajectory run from s0 with constant theta."""
    if t < 1:
        raise ContractViolation("compound loss needs t >= 1")
    states = run_trajectory(sys, s0, theta, t)
    return float(sys.loss(t, states[t]))


class _ConstantDim:
    """Mixin for systems whose state dimension does not vary with t."""

    _dim: int

    def state_dim(self, t: int) -> int:
        return self._dim


class LinearSystem(_ConstantDim, System):
    """s_t = A s_{t-1} + B theta + C x_t with linear loss <w, s_t>.

    `inputs` maps t -> input vector (or None for no input). The spectral
    radius of A governs stability; it is not checked here, callers assert
    it through the diagnostics module.
    """

    def __init__(self, A, B, C=None, inputs=None, loss_weights=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n:
            raise ConfigurationError("A must be square and B must have matching rows")
        self._dim = n
        self.param_dim = self.B.shape[1]
        self.C = None if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        self.inputs = inputs
        self.w = np.ones(n) if loss_weights is None else np.asarray(loss_weights, dtype=float)

    def transition(self, t, s, theta):
        out = self.A @ s + self.B @ theta
        if self.C is not None and self.inputs is not None:
            out = out + self.C @ np.atleast_1d(self.inputs(t))
        return out

    def d_transition_ds(self, t, s, theta):
        return self.A.copy()

    def d_transition_dtheta(self, t, s, theta):
        return self.B.copy()

    def loss(self, t, s):
        return float(self.w @ s)

    def d_loss_ds(self, t, s):
        return self.w.copy()


class SquaredErrorLoss:
    """Per-sample loss l(x, y, theta) = (<theta, x> - y)^2 of a linear model."""

    def __init__(self, xs, ys):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.dim = self.xs.shape[1]

    def predict(self, i, theta):
        return float(self.xs[i] @ theta)

    def value(self, i, theta):
        return (self.predict(i, theta) - self.ys[i]) ** 2

    def grad(self, i, theta):
        return 2.0 * (self.predict(i, theta) - self.ys[i]) * self.xs[i]

    def hess(self, i, theta):
        return 2.0 * np.outer(self.xs[i], self.xs[i])


class LinearCoefficientLoss:
    """Per-sample loss l_i(theta) = c_i * theta for scalar theta.

    The period-3 divergence instance for fixed-beta^2 adaptive descent is
    this loss with coefficients (C, -1, -1) cycled.
    """

    def __init__(self, coefs):
        self.coefs = np.asarray(coefs, dtype=float)
        self.dim = 1

    def value(self, i, theta):
        return float(self.coefs[i] * theta[0])

    def grad(self, i, theta):
        return np.array([self.coefs[i]])

    def hess(self, i, theta):
        return np.zeros((1, 1))


def _index_lookup(indices):
    """Normalize an index sequence (array or callable) to a callable of t."""
    if callable(indices):
        return indices
    arr = np.asarray(indices, dtype=int)

    def lookup(t):
        if t >= len(arr):
            raise ContractViolation(f"index sequence of length {len(arr)} has no entry for t={t}")
        return int(arr[t])

    return lookup


class NonRecurrentRegression(_ConstantDim, System):
    """Non-recurrent case: the state is the current prediction.

    T_t(s, theta) = <theta_core, x_{i_t}> discards s entirely, and
    l_t(s) = (s - y_{i_t})^2. Gradient descent through this system is
    plain SGD on the per-sample loss. `core_dim` restricts the model to
    the leading coordinates of theta so that augmented parameters
    (theta, psi) used by adaptive rules pass through untouched.
    """

    def __init__(self, xs, ys, indices, param_dim=None, core_dim=None):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self._idx = _index_lookup(indices)
        self.core_dim = self.xs.shape[1] if core_dim is None else core_dim
        self.param_dim = self.core_dim if param_dim is None else param_dim
        if self.core_dim > self.param_dim:
            raise ConfigurationError("core_dim cannot exceed param_dim")
        self._dim = 1

    def transition(self, t, s, theta):
        i = self._idx(t)
        return np.array([self.xs[i] @ theta[: self.core_dim]])

    def d_transition_ds(self, t, s, theta):
        return np.zeros((1, 1))

    def d_transition_dtheta(self, t, s, theta):
        out = np.zeros((1, self.param_dim))
        out[0, : self.core_dim] = self.xs[self._idx(t)]
        return out

    def loss(self, t, s):
        return float((s[0] - self.ys[self._idx(t)]) ** 2)

    def d_loss_ds(self, t, s):
        return np.array([2.0 * (s[0] - self.ys[self._idx(t)])])


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class RNNSystem(_ConstantDim, System):
    """Simple recurrent cell s_t = sigmoid(W s_{t-1} + W' x_t + B).

    The parameter is the flat concatenation [W (row-major), W', B] with
    p = n^2 + n*m + n. Loss is 0.5 ||s_t - y_t||^2 against a target
    sequence (default zero targets).
    """

    def __init__(self, n, m, inputs=None, targets=None):
        self.n = n
        self.m = m
        self._dim = n
        self.param_dim = n * n + n * m + n
        self.inputs = inputs
        self.targets = targets

    def _unpack(self, theta):
        n, m = self.n, self.m
        W = theta[: n * n].reshape(n, n)
        Wx = theta[n * n : n * n + n * m].reshape(n, m)
        B = theta[n * n + n * m :]
        return W, Wx, B

    @staticmethod
    def pack(W, Wx, B):
        return np.concatenate([np.ravel(W), np.ravel(Wx), np.ravel(B)])

    def _input(self, t):
        if self.m == 0:
            return np.zeros(0)
        if self.inputs is None:
            return np.zeros(self.m)
        return np.atleast_1d(self.inputs(t))

    def _target(self, t):
        if self.targets is None:
            return np.zeros(self.n)
        return np.atleast_1d(self.targets(t))

    def _preactivation(self, t, s, theta):
        W, Wx, B = self._unpack(theta)
        h = W @ s + B
        if self.m:
            h = h + Wx @ self._input(t)
        return h

    def transition(self, t, s, theta):
        return _sigmoid(self._preactivation(t, s, theta))

    def d_transition_ds(self, t, s, theta):
        W, _, _ = self._unpack(theta)
        h = self._preactivation(t, s, theta)
        sig = _sigmoid(h)
        return (sig * (1.0 - sig))[:, None] * W

    def d_transition_dtheta(self, t, s, theta):
        n, m = self.n, self.m
        h = self._preactivation(t, s, theta)
        sig = _sigmoid(h)
        d = sig * (1.0 - sig)
        # d(pre_i)/dW_{ab} = delta_{ia} s_b, and similarly for W' and B.
        jac = np.zeros((n, self.param_dim))
        jac[:, : n * n] = np.kron(np.eye(n), s[None, :])
        if m:
            jac[:, n * n : n * n + n * m] = np.kron(np.eye(n), self._input(t)[None, :])
        jac[:, n * n + n * m :] = np.eye(n)
        return d[:, None] * jac

    def loss(self, t, s):
        r = s - self._target(t)
        return 0.5 * float(r @ r)

    def d_loss_ds(self, t, s):
        return s - self._target(t)


class MomentumSystem(_ConstantDim, System):
    """Scalar state s_t = beta s_{t-1} + (1-beta) l(x_{i_t}, y_{i_t}, theta).

    With loss l_t(s) = s, forward Jacobian propagation on this system
    maintains exactly the exponential moving average of per-sample
    gradients, so plain descent through it is SGD with momentum, and an
    adaptive update rule on top of it gives Adam-style methods.
    `core_dim` restricts the sample loss to the leading coordinates of an
    augmented parameter.
    """

    def __init__(self, sample_loss, indices, beta, param_dim=None, core_dim=None):
        if not 0.0 <= beta < 1.0:
            raise ConfigurationError("momentum beta must lie in [0, 1)")
        self.sample_loss = sample_loss
        self._idx = _index_lookup(indices)
        self.beta = beta
        self.core_dim = sample_loss.dim if core_dim is None else core_dim
        self.param_dim = self.core_dim if param_dim is None else param_dim
        self._dim = 1

    def transition(self, t, s, theta):
        i = self._idx(t)
        val = self.sample_loss.value(i, theta[: self.core_dim])
        return np.array([self.beta * s[0] + (1.0 - self.beta) * val])

    def d_transition_ds(self, t, s, theta):
        return np.array([[self.beta]])

    def d_transition_dtheta(self, t, s, theta):
        i = self._idx(t)
        out = np.zeros((1, self.param_dim))
        out[0, : self.core_dim] = (1.0 - self.beta) * self.sample_loss.grad(i, theta[: self.core_dim])
        return out

    def loss(self, t, s):
        return float(s[0])

    def d_loss_ds(self, t, s):
        return np.ones(1)


class InfluenceBalancing(_ConstantDim, System):
    """Stable chain whose short-horizon gradient has the wrong sign.

    s_t = A s_{t-1} + u * theta, where A is upper-bidiagonal (diagonal
    (1+delta)/2 on the first n_plus rows, (1-delta)/2 after, superdiagonal
    1/2) and u has n_plus entries +1 followed by -1 entries. The loss is
    (s^1)^2 on the chain's sink coordinate. With n_plus < n/2 the
    stationary value of s^1 is a negative multiple of theta, so the
    long-run gradient pushes theta toward the optimum theta* = 0, while a
    one-step truncated gradient sees only the +1 influence of u on s^1
    and pushes theta the other way.
    """

    def __init__(self, n=6, n_plus=2, delta=0.05):
        if not (1 <= n_plus < n / 2):
            raise ConfigurationError("need 1 <= n_plus < n/2 for the sign imbalance")
        if not 0.0 < delta < 1.0:
            raise ConfigurationError("delta must lie in (0, 1)")
        A = np.zeros((n, n))
        for i in range(n):
            A[i, i] = (1.0 + delta) / 2.0 if i < n_plus else (1.0 - delta) / 2.0
            if i + 1 < n:
                A[i, i + 1] = 0.5
        u = np.where(np.arange(n) < n_plus, 1.0, -1.0)
        self.A = A
        self.u = u
        self._dim = n
        self.param_dim = 1

    def stationary_state(self, theta):
        """Fixed point of the frozen-theta dynamics (linear solve)."""
        return np.linalg.solve(np.eye(self._dim) - self.A, self.u * theta[0])

    def transition(self, t, s, theta):
        return self.A @ s + self.u * theta[0]

    def d_transition_ds(self, t, s, theta):
        return self.A.copy()

    def d_transition_dtheta(self, t, s, theta):
        return self.u[:, None].copy()

    def loss(self, t, s):
        return float(s[0] ** 2)

    def d_loss_ds(self, t, s):
        out = np.zeros(self._dim)
        out[0] = 2.0 * s[0]
        return out


class TanhSystem(_ConstantDim, System):
    """Bounded smooth system s_t = tanh(W s_{t-1} + U theta + b + c_t).

    W, U, b are fixed at construction (W scaled to be contracting), and
    c_t is an optional bounded drive. States stay in (-1, 1), which makes
    this the workhorse for randomized Jacobian and error-gauge tests at
    arbitrary (state_dim, param_dim).
    """

    def __init__(self, W, U, b, drive=None, loss_targets=None):
        self.W = np.atleast_2d(np.asarray(W, dtype=float))
        self.U = np.atleast_2d(np.asarray(U, dtype=float))
        self.b = np.asarray(b, dtype=float)
        self._dim = self.W.shape[0]
        self.param_dim = self.U.shape[1]
        self.drive = drive
        self.loss_targets = loss_targets

    @classmethod
    def random(cls, rng, state_dim, param_dim, contraction=0.7, drive_amp=0.3):
        W = rng.normal(size=(state_dim, state_dim))
        W *= contraction / max(np.linalg.norm(W, 2), 1e-12)
        U = rng.normal(size=(state_dim, param_dim)) / math.sqrt(param_dim)
        b = 0.1 * rng.normal(size=state_dim)
        phases = rng.uniform(0.0, 2.0 * math.pi, size=state_dim)

        def drive(t):
            return drive_amp * np.cos(0.7 * t + phases)

        return cls(W, U, b, drive=drive)

    def _pre(self, t, s, theta):
        h = self.W @ s + self.U @ theta + self.b
        if self.drive is not None:
            h = h + self.drive(t)
        return h

    def transition(self, t, s, theta):
        return np.tanh(self._pre(t, s, theta))

    def d_transition_ds(self, t, s, theta):
        d = 1.0 - np.tanh(self._pre(t, s, theta)) ** 2
        return d[:, None] * self.W

    def d_transition_dtheta(self, t, s, theta):
        d = 1.0 - np.tanh(self._pre(t, s, theta)) ** 2
        return d[:, None] * self.U

    def _target(self, t):
        if self.loss_targets is None:
            return np.zeros(self._dim)
        return np.atleast_1d(self.loss_targets(t))

    def loss(self, t, s):
        r = s - self._target(t)
        return 0.5 * float(r @ r)

    def d_loss_ds(self, t, s):
        return s - self._target(t)


class ResetWrapper(System):
    """Wraps a system so the state resets to s0_star at given times.

    At a reset step the transition ignores its arguments and returns
    s0_star (both Jacobians are zero there). Losses at reset steps are
    counted normally; the underlying sequence model does not say how they
    should be weighted, so no special-casing is done.
    """

    def __init__(self, base: System, reset_times, s0_star):
        self.base = base
        self.reset_times = set(int(t) for t in reset_times)
        self.s0_star = np.asarray(s0_star, dtype=float)
        self.param_dim = base.param_dim

    def state_dim(self, t):
        return self.base.state_dim(t)

    def transition(self, t, s, theta):
        if t in self.reset_times:
            return self.s0_star.copy()
        return self.base.transition(t, s, theta)

    def d_transition_ds(self, t, s, theta):
        if t in self.reset_times:
            return np.zeros((self.state_dim(t), self.state_dim(t - 1)))
        return self.base.d_transition_ds(t, s, theta)

    def d_transition_dtheta(self, t, s, theta):
        if t in self.reset_times:
            return np.zeros((self.state_dim(t), self.param_dim))
        return self.base.d_transition_dtheta(t, s, theta)

    def loss(self, t, s):
        return self.base.loss(t, s)

    def d_loss_ds(self, t, s):
        return self.base.d_loss_ds(t, s)


def make_example(kind: str, **params) -> System:
    """Factory for the concrete example systems.

    Kinds: `nonrecurrent` (regression, state = prediction), `rnn`,
    `momentum`, `influence_balancing`, `linear`.
    """
    try:
        if kind == "linear":
            return LinearSystem(
                params["A"], params["B"], params.get("C"),
                inputs=params.get("inputs"), loss_weights=params.get("loss_weights"),
            )
        if kind == "nonrecurrent":
            return NonRecurrentRegression(
                params["xs"], params["ys"], params["indices"],
                param_dim=params.get("param_dim"), core_dim=params.get("core_dim"),
            )
        if kind == "rnn":
            return RNNSystem(
                params["n"], params["m"],
                inputs=params.get("inputs"), targets=params.get("targets"),
            )
        if kind == "momentum":
            return MomentumSystem(
                params["sample_loss"], params["indices"], params["beta"],
                param_dim=params.get("param_dim"), core_dim=params.get("core_dim"),
            )
        if kind == "influence_balancing":
            return InfluenceBalancing(
                params.get("n", 6), params.get("n_plus", 2), params.get("delta", 0.05)
            )
    except KeyError as exc:
        raise ConfigurationError(f"missing parameter {exc} for system kind {kind!r}") from exc
    raise ConfigurationError(f"unknown system kind {kind!r}")


def check_jacobians(sys: System, t, s, theta, h=1e-6, rtol=1e-5):
    """Compare analytic Jacobians against central finite differences.

    Returns the worst relative error over the three Jacobian contracts
    (transition w.r.t. state and parameter, loss w.r.t. state). The error
    is ||analytic - fd|| / max(1, ||analytic||) so exactly-zero Jacobians
    are checked absolutely.
    """
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n_out = sys.state_dim(t)

    def fd_jac(f, x, out_dim):
        jac = np.zeros((out_dim, len(x)))
        for j in range(len(x)):
            e = np.zeros(len(x))
            e[j] = h
            jac[:, j] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2.0 * h)
        return jac

    worst = 0.0

    def rel(analytic, fd):
        return np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(analytic))

    worst = max(worst, rel(
        sys.d_transition_ds(t, s, theta),
        fd_jac(lambda x: sys.transition(t, x, theta), s, n_out),
    ))
    worst = max(worst, rel(
        sys.d_transition_dtheta(t, s, theta),
        fd_jac(lambda x: sys.transition(t, s, x), theta, n_out),
    ))
    s_new = sys.transition(t, s, theta)
    worst = max(worst, rel(
        np.atleast_2d(sys.d_loss_ds(t, s_new)),
        fd_jac(lambda x: np.array([sys.loss(t, x)]), s_new, 1),
    ))
    return worst, worst <= rtol
