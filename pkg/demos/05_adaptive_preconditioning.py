"""Adaptive preconditioning as descent on an augmented parameter.

Square-gradient statistics psi are folded into the parameter
theta+ = (theta, psi) with the coupling beta_t = 1 - c * eta_t, so the
whole method is one extended descent whose averaged update Jacobian is
block triangular: spectrum eig(P H) together with c. Keeping beta fixed
instead breaks the coupling and can send the iterate to the wrong corner
of the feasible box on a classic period-3 instance.
"""

import numpy as np

from dynlearn import StepSchedule, estimate_lambda, is_positive_stable, run_learning
from dynlearn.dynamics import LinearCoefficientLoss, SquaredErrorLoss
from dynlearn.schedules import sample_indices
from dynlearn.updates import rule_adam

rng = np.random.default_rng(np.random.Philox(key=3))

print("=== spectrum of the averaged update Jacobian at the optimum ===")
xs = rng.normal(size=(16, 4))
ys = xs @ rng.normal(size=4) + 0.1 * rng.normal(size=16)
theta_star = np.linalg.lstsq(xs, ys, rcond=None)[0]
loss = SquaredErrorLoss(xs, ys)
N, c = 16, 0.9
T = N * 25
idx = sample_indices("cycling", N, T)
setup = rule_adam(loss, idx, beta1=0.0, c=c, eps=1e-3)
psi_star = np.mean([loss.grad(i, theta_star) ** 2 for i in range(N)], axis=0)
lam, _ = estimate_lambda(setup.system, setup.rule,
                         np.concatenate([theta_star, psi_star]), T, np.zeros(1))
eigs = np.sort_complex(np.linalg.eigvals(lam))
stable, min_real = is_positive_stable(lam)
print("  eigenvalues:", np.round(eigs, 4))
print(f"  four of them sit at c = {c}; positive-stable: {stable} (min real part {min_real:.3f})")

print("\n=== the fixed-inertia failure mode (period-3 losses, box [-1, 1]) ===")
p3 = LinearCoefficientLoss([3.0, -1.0, -1.0])
sched = StepSchedule(0.5, 0.7)
T = 50_000


class BlockProjection:
    def apply(self, t, theta, w):
        out = np.asarray(theta, dtype=float) - np.asarray(w, dtype=float)
        out[:1] = np.clip(out[:1], -1.0, 1.0)
        return out


for label, fixed_beta2 in (("beta2 -> 1 (1 - c*eta_t)", None), ("beta2 = 0.1 fixed", 0.1)):
    idx = sample_indices("cycling", 3, T)
    setup = rule_adam(p3, idx, beta1=0.0, c=1.0, timing="psi_first",
                      schedule=sched, fixed_beta2=fixed_beta2)
    theta0 = setup.initial_theta(np.array([0.0]))
    rec = run_learning(setup.system, np.zeros(1), theta0, None, sched,
                       rule=setup.rule, phi=BlockProjection(), T=T,
                       theta_star=np.array([-1.0]), dist_dims=1, record_every=5000)
    print(f"  {label:>24}: final theta {rec.final_theta[0]:+.4f} "
          f"(optimum -1, distance {rec.final_dist():.2e})")
print("  the large every-third gradient is damped by its own inflated statistic")
print("  when beta2 is small and fixed, so the two +1 pushes win: wrong corner.")
print("  note: at beta2 = 0.99 the inflation is ~1% and both variants converge;")
print("  the coupling beta2 = 1 - c*eta_t is what the local guarantees cover.")
