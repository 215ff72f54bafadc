"""Rank-one stochastic Jacobian propagation (sign-based reductions).

The full forward Jacobian J_t (dim S_t x p) is too large to carry for big
systems, so it is approximated by a single outer product
v_state (x) v_param. Propagating through the Jacobian recursion breaks the
rank-one structure:

    jac_s . (v_state (x) v_param) + jac_theta

is rank-one plus a full matrix. The reduction operators below collapse it
back to rank one using i.i.d. random signs nu_i in {-1, +1}, built so the
collapse is exactly unbiased: averaged over the signs, the reduced outer
product equals the full right-hand side.

Two variants are implemented. The dense-sign variant equalizes each basis
term separately (dim+1 norm equalizations per step):

    reduce = rho(jac_s v_state, v_param)
             + sum_i nu_i * rho(e_i, row_i(jac_theta))

and the two-equalization variant first contracts with the signs:

    reduce = rho(jac_s v_state, v_param)
             + rho(sum_i nu_i e_i, sum_i nu_i row_i(jac_theta)).

rho is the norm-equalizing operator: it rescales a pair (v1, v2) so both
factors get norm sqrt(||v1|| ||v2||) while v1 (x) v2 is preserved. This
variance-reduction step is what keeps the per-step error E_t of order
sqrt(||J||) instead of ||J||: every draw satisfies

    ||E_t|| <= 2 * dim(S) * y * ||J_prev||^(1/2) + dim(S)^2 * y

with y the operator norm of the joint Jacobian [jac_s jac_theta].
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .dynamics import ConfigurationError, ContractViolation, System, TanhSystem

__all__ = [
    "RankOnePair",
    "norm_equalize",
    "sample_signs",
    "nbt_reduce",
    "uoro_reduce",
    "error_term",
    "error_gauge_bound",
    "joint_jacobian_norm",
    "verify_unbiased",
    "UnbiasednessReport",
    "ErrorInjector",
    "ZeroInjector",
    "RankOneInjector",
]


@dataclass
class RankOnePair:
    """Outer-product representation v_state (x) v_param of a Jacobian.

    (lam * v_state, v_param / lam) represents the same matrix for any
    lam > 0; equality of pairs is only meaningful through `matrix()`.
    Pairs are stored unnormalized between steps; no re-balancing happens
    outside the reduction itself.
    """

    v_state: np.ndarray
    v_param: np.ndarray

    def __post_init__(self):
        self.v_state = np.asarray(self.v_state, dtype=float)
        self.v_param = np.asarray(self.v_param, dtype=float)

    @classmethod
    def zero(cls, state_dim, param_dim):
        return cls(np.zeros(state_dim), np.zeros(param_dim))

    def matrix(self) -> np.ndarray:
        return np.outer(self.v_state, self.v_param)


def norm_equalize(v1, v2):
    """Rescale (v1, v2) so both factors share the norm sqrt(||v1|| ||v2||).

    The outer product is preserved exactly; if either input is zero the
    result is (0, 0) (total function, no special cases raised).
    """
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        return np.zeros_like(v1), np.zeros_like(v2)
    rho = np.sqrt(n2 / n1)
    return rho * v1, v2 / rho


def sample_signs(dim: int, rng) -> np.ndarray:
    """I.i.d. uniform +-1 vector of length dim (exact +-1.0 entries)."""
    if dim < 1:
        raise ContractViolation("sign vector dimension must be >= 1")
    return rng.integers(0, 2, size=dim) * 2.0 - 1.0


def _first_term(pair: RankOnePair, jac_s):
    """Propagated-and-equalized pair for jac_s . (v_state (x) v_param).

    When jac_s @ v_state vanishes the equalizing factor is taken to be 1,
    so the pair (0, v_param) is returned; its outer product is still the
    exact propagation (the zero matrix).
    """
    forwarded = jac_s @ pair.v_state
    if np.linalg.norm(forwarded) == 0.0:
        return forwarded, pair.v_param.copy()
    return norm_equalize(forwarded, pair.v_param)


def nbt_reduce(pair: RankOnePair, s, theta, jac_s, jac_theta, signs) -> RankOnePair:
    """Dense-sign reduction: one equalization per parameter-Jacobian row.

    signs must have length dim(S_t) = jac_s.shape[0]. Each row i of
    jac_theta is paired with the canonical basis vector e_i, equalized,
    and added with sign nu_i (the sign multiplies both factors of the
    pair, which is what makes the cross terms cancel in expectation).
    """
    jac_s = np.atleast_2d(jac_s)
    jac_theta = np.atleast_2d(jac_theta)
    dim_new = jac_s.shape[0]
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (dim_new,):
        raise ContractViolation(f"sign vector has shape {signs.shape}, expected ({dim_new},)")
    if jac_theta.shape[0] != dim_new:
        raise ContractViolation("jac_s and jac_theta disagree on the new state dimension")

    v_state, v_param = _first_term(pair, jac_s)
    v_state = v_state.copy()
    v_param = v_param.copy()
    basis = np.eye(dim_new)
    for i in range(dim_new):
        ei_scaled, row_scaled = norm_equalize(basis[i], jac_theta[i])
        v_state += signs[i] * ei_scaled
        v_param += signs[i] * row_scaled
    return RankOnePair(v_state, v_param)


def uoro_reduce(pair: RankOnePair, s, theta, jac_s, jac_theta, signs) -> RankOnePair:
    """Two-equalization reduction: contract with the signs first.

    Exactly two norm equalizations per step regardless of dim(S_t), which
    is the computational advantage over the dense-sign variant.
    """
    jac_s = np.atleast_2d(jac_s)
    jac_theta = np.atleast_2d(jac_theta)
    dim_new = jac_s.shape[0]
    signs = np.asarray(signs, dtype=float)
    if signs.shape != (dim_new,):
        raise ContractViolation(f"sign vector has shape {signs.shape}, expected ({dim_new},)")
    if jac_theta.shape[0] != dim_new:
        raise ContractViolation("jac_s and jac_theta disagree on the new state dimension")

    v_state, v_param = _first_term(pair, jac_s)
    sign_state, sign_param = norm_equalize(signs, signs @ jac_theta)
    return RankOnePair(v_state + sign_state, v_param + sign_param)


def error_term(J_new, J_old, jac_s, jac_theta) -> np.ndarray:
    """Per-step deviation from the exact Jacobian recursion.

    E = J_new - jac_s . J_old - jac_theta, all as dense matrices.
    """
    J_new = np.atleast_2d(J_new)
    J_old = np.atleast_2d(J_old)
    jac_s = np.atleast_2d(jac_s)
    jac_theta = np.atleast_2d(jac_theta)
    if J_new.shape != jac_theta.shape or jac_s.shape[1] != J_old.shape[0]:
        raise ContractViolation("error_term arguments have inconsistent shapes")
    return J_new - jac_s @ J_old - jac_theta


def joint_jacobian_norm(jac_s, jac_theta) -> float:
    """Operator norm of the joint Jacobian [jac_s jac_theta]."""
    return float(np.linalg.norm(np.hstack([np.atleast_2d(jac_s), np.atleast_2d(jac_theta)]), 2))


def error_gauge_bound(dim_state: int, y: float, j_old_norm: float) -> float:
    """Closed-form gauge: 2*dim*y*||J||^(1/2) + dim^2*y."""
    return 2.0 * dim_state * y * np.sqrt(j_old_norm) + dim_state**2 * y


_REDUCERS = {"nbt": nbt_reduce, "nobacktrack": nbt_reduce, "uoro": uoro_reduce}


class ErrorInjector:
    """Interface: produces the per-step Jacobian error E_t."""

    def next_error(self, t, s_prev, theta_prev, J_prev, jac_s, jac_theta, rng):
        raise NotImplementedError

    def reset(self):
        pass


class ZeroInjector(ErrorInjector):
    """E_t = 0: recovers the exact algorithm bit for bit."""

    def next_error(self, t, s_prev, theta_prev, J_prev, jac_s, jac_theta, rng):
        return np.zeros_like(np.atleast_2d(jac_theta))


class RankOneInjector(ErrorInjector):
    """Carries the rank-one pair and injects its reduction error.

    The learner's dense Jacobian then tracks matrix(pair) exactly (up to
    float rounding), so a single learner code path serves both the exact
    and the randomized algorithms.
    """

    def __init__(self, reducer="uoro", initial_pair=None):
        if reducer not in _REDUCERS:
            raise ConfigurationError(f"unknown reducer {reducer!r}")
        self.reducer_name = "uoro" if reducer == "uoro" else "nbt"
        self.reduce = _REDUCERS[reducer]
        self.initial_pair = initial_pair
        self.pair = initial_pair

    def reset(self):
        self.pair = self.initial_pair

    def next_error(self, t, s_prev, theta_prev, J_prev, jac_s, jac_theta, rng):
        jac_theta = np.atleast_2d(jac_theta)
        jac_s = np.atleast_2d(jac_s)
        if self.pair is None:
            self.pair = RankOnePair.zero(jac_s.shape[1], jac_theta.shape[1])
        signs = sample_signs(jac_s.shape[0], rng)
        new_pair = self.reduce(self.pair, s_prev, theta_prev, jac_s, jac_theta, signs)
        err = error_term(new_pair.matrix(), self.pair.matrix(), jac_s, jac_theta)
        self.pair = new_pair
        return err


@dataclass
class UnbiasednessReport:
    """Result of exhaustive sign enumeration for a reduction operator."""

    reducer: str
    dim: int
    steps: int
    max_step_bias: float
    max_jacobian_bias: float
    tolerance: float = 1e-10

    @property
    def max_bias(self) -> float:
        return max(self.max_step_bias, self.max_jacobian_bias)

    @property
    def passed(self) -> bool:
        return self.max_bias <= self.tolerance

    def csv_row(self):
        return [self.reducer, self.dim, self.steps, self.max_bias]

    csv_header = ("reducer", "dim", "steps", "max_bias")


def verify_unbiased(reducer: str, dim: int, steps: int = 1, seed: int = 0,
                    param_dim: int | None = None, system: System | None = None,
                    budget: int = 1 << 20) -> UnbiasednessReport:
    """Exhaustively enumerate sign draws and measure the bias.

    Runs the system open loop (frozen theta), maintaining one rank-one
    pair per sign history. Reports the largest |mean E_t| over all step
    prefixes and, for multi-step runs, the deviation of the enumerated
    mean of the rank-one Jacobian from the exact one (the recursion is
    affine in J, so unbiased per-step errors keep the whole Jacobian
    unbiased).

    Raises ConfigurationError when 2^(dim*steps) exceeds the budget.
    """
    if reducer not in _REDUCERS:
        raise ConfigurationError(f"unknown reducer {reducer!r}")
    if 2 ** (dim * steps) > budget:
        raise ConfigurationError(
            f"exhaustive enumeration needs 2^{dim * steps} paths, over the budget of {budget}"
        )
    reduce = _REDUCERS[reducer]
    rng = np.random.default_rng(np.random.Philox(key=seed))
    if system is None:
        p = param_dim or dim + 1
        system = TanhSystem.random(rng, dim, p)
    p = system.param_dim
    theta = 0.3 * rng.normal(size=p)
    s = 0.2 * rng.normal(size=system.state_dim(0))

    # Paths through the sign tree: (pair, weight). Exact J runs alongside.
    paths = [RankOnePair.zero(system.state_dim(0), p)]
    J_exact = np.zeros((system.state_dim(0), p))
    max_step_bias = 0.0
    all_signs = None
    for t in range(1, steps + 1):
        jac_s = system.d_transition_ds(t, s, theta)
        jac_th = system.d_transition_dtheta(t, s, theta)
        dim_t = jac_s.shape[0]
        if all_signs is None or all_signs.shape[1] != dim_t:
            all_signs = np.array(list(itertools.product((-1.0, 1.0), repeat=dim_t)))
        new_paths = []
        for pair in paths:
            propagated = jac_s @ pair.matrix() + jac_th
            err_mean = np.zeros_like(propagated)
            for signs in all_signs:
                new_pair = reduce(pair, s, theta, jac_s, jac_th, signs)
                new_paths.append(new_pair)
                err_mean += new_pair.matrix() - propagated
            err_mean /= len(all_signs)
            max_step_bias = max(max_step_bias, float(np.max(np.abs(err_mean))))
        paths = new_paths
        J_exact = jac_s @ J_exact + jac_th
        s = system.transition(t, s, theta)

    J_mean = np.zeros_like(J_exact)
    for pair in paths:
        J_mean += pair.matrix()
    J_mean /= len(paths)
    max_jac_bias = float(np.linalg.norm(J_mean - J_exact))
    return UnbiasednessReport(reducer, dim, steps, max_step_bias, max_jac_bias)
