"""How the sampling scheme changes the admissible learning rates.

Cycling (or per-epoch reshuffling) over a finite dataset makes empirical
averages of gradients at the optimum cancel exactly every epoch, so the
step exponent b in eta_t = gamma t^-b may take any value in (0, 1]. Pure
i.i.d. sampling only averages out at the statistical sqrt rate, which
forces b > 1/2. This demo measures both rates and runs a small sweep.
"""

import numpy as np

from dynlearn import ExponentProfile, ergodic_exponent_estimate, validate_exponents
from dynlearn.dynamics import SquaredErrorLoss
from dynlearn.harness import ExperimentConfig, run_trial
from dynlearn.schedules import moment_rate_range, sample_indices

rng = np.random.default_rng(np.random.Philox(key=1))
xs = rng.normal(size=(16, 4))
theta_star_true = rng.normal(size=4)
ys = xs @ theta_star_true + 0.1 * rng.normal(size=16)
theta_star = np.linalg.lstsq(xs, ys, rcond=None)[0]
loss = SquaredErrorLoss(xs, ys)

print("=== measured ergodic exponents of gradient averages at the optimum ===")
T = 16 * 2000
for scheme in ("cycling", "iid"):
    idx = sample_indices(scheme, 16, T, rng)
    grads = np.array([loss.grad(idx[t], theta_star) for t in range(1, T + 1)])
    rep = ergodic_exponent_estimate(grads, T)
    print(f"  {scheme:>8}: a_hat = {rep.a_hat:+.3f}  (r^2 = {rep.r_squared:.2f})")
print("  cycling sums cancel per epoch -> exponent near 0; i.i.d. drifts like sqrt(T).")

print("\n=== admissible step exponents per algorithm class ===")
for klass, a in [("exact_rtrl", 0.05), ("imperfect_rtrl", 0.55), ("tbptt", 0.2)]:
    for b in (0.3, 0.6, 0.9):
        profile = ExponentProfile(a, 0.0, klass, A=0.4 if klass == "tbptt" else None)
        ok, why = validate_exponents(profile, b)
        print(f"  {klass:>14} a={a:.2f} b={b:.1f}: {'valid' if ok else 'invalid: ' + why[0]}")
print("  streaming data with h-th moment bounds:",
      ", ".join(f"h={h}: b > {moment_rate_range(h).b_min:.3g}" for h in (4, 8, 16)))

print("\n=== small-exponent descent works under cycling ===")
base = {
    "experiment.name": "demo2", "experiment.seeds": "0", "experiment.horizon": "20000",
    "experiment.record_every": "1000",
    "system.kind": "linear_regression", "system.n_samples": "16", "system.dim": "4",
    "system.noise": "0.1", "system.data_seed": "1234",
    "algorithm.name": "sgd", "schedule.gamma": "0.1",
    "init.theta0": "near_optimum", "init.radius": "0.5",
}
for scheme, b in [("cycling", 0.3), ("iid", 0.3), ("iid", 0.7)]:
    cfg = ExperimentConfig({**base, "sampling.scheme": scheme, "schedule.b": str(b)})
    finals = [run_trial(cfg, seed).final_dist() for seed in range(4)]
    print(f"  {scheme:>8} b={b}: final distances {['%.1e' % d for d in finals]}")
print("  (cycling tolerates b = 0.3; i.i.d. at b = 0.3 keeps a noise floor)")
