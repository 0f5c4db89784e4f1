"""SGD against SVRG on a nonconvex logistic instance at a fixed IFO budget.

Tunes SGD over constant and t-inverse grids and SVRG over mu in the
certified range on two tuning seeds, then reruns the winners on fresh seeds
and prints final gradient norms and fitted log-log slopes.

    python3 scripts/rate_separation.py --n 5000 --d 50 --passes 30 --seeds 10
"""

import argparse

import numpy as np

from svrgkit.bench.compare import fit_rate
from svrgkit.certificates import theoretical_svrg_params
from svrgkit.optimizers import SvrgSchedule, inverse_t_schedule, run_sgd, run_svrg
from svrgkit.problems import make_logistic


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=5000)
    parser.add_argument("--d", type=int, default=50)
    parser.add_argument("--lambda-r", type=float, default=0.05)
    parser.add_argument("--passes", type=int, default=30)
    parser.add_argument("--seeds", type=int, default=10)
    args = parser.parse_args()

    n = args.n
    problem = make_logistic(n, args.d, lambda_r=args.lambda_r, seed=0)
    L = problem.L
    x0 = np.random.default_rng(1).normal(size=args.d)
    T = args.passes * n
    tune, seeds = (100, 101), range(args.seeds)

    def sgd(schedule, seed):
        return run_sgd(problem, x0, T, schedule, seed, checkpoint_every=n // 2)

    def svrg(mu, seed):
        eta, _, m = theoretical_svrg_params(n, L, 2 / 3, mu)
        sched = SvrgSchedule(eta=eta, m=m, T=(T // (n + 2 * m)) * m)
        return run_svrg(problem, x0, sched, seed, checkpoint_every=n // 4)

    grid = {f"constant eta*L={c:g}": c / L for c in (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)}
    grid.update({f"inverse_t eta0*L={c:g}": inverse_t_schedule(c / L, 1.0, n) for c in (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)})
    scores = {name: np.median([sgd(s, k).final_grad_norm_sq for k in tune]) for name, s in grid.items()}
    for name, score in scores.items():
        print(f"tune SGD {name:<24s} {score:.3e}")
    best = min(scores, key=scores.get)
    mu_scores = {mu: np.median([svrg(mu, k).final_grad_norm_sq for k in tune]) for mu in (0.25, 0.5, 0.75, 0.99)}
    mu = min(mu_scores, key=mu_scores.get)
    print(f"tune SVRG mu: {', '.join(f'{k}: {v:.3e}' for k, v in mu_scores.items())}")

    for label, runs in ((f"SGD {best}", [sgd(grid[best], k) for k in seeds]),
                        (f"SVRG mu={mu}", [svrg(mu, k) for k in seeds])):
        final = np.median([r.final_grad_norm_sq for r in runs])
        slope = np.median([fit_rate(r, (1.0, args.passes)) for r in runs])
        print(f"{label:<36s} median final {final:.3e}  median slope {slope:.2f}")


if __name__ == "__main__":
    main()
