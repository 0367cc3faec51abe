"""Relational Kalman filter: last-step MAP error and KL for tree and cycle transitions.

    python3 scripts/run_rkf.py --wells 10 --steps 20
"""
import argparse

from lhvi.fit import FitConfig, fit
from lhvi.graph import condition
from lhvi.inference import avg_l1_error, avg_univariate_kl, map_estimate
from lhvi.models import gen_rkf
from lhvi.optimizer import OptimConfig
from lhvi.oracles import gaussian_exact


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wells", type=int, default=10)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    optim = OptimConfig(max_iters=5000, obj_tol=1e-13, grad_tol=1e-7)
    print(f"{'structure':9s} {'method':7s} {'l1':>10s} {'KL':>10s}")
    for structure in ("tree", "cycle"):
        graph, ev = gen_rkf(args.wells, args.steps, structure, args.seed)
        truth = gaussian_exact(condition(graph, ev))
        last = [k for k in truth.means() if k.startswith("x(") and k.endswith(f",{args.steps - 1})")]
        exact = truth.marginals()
        for name, entropy, mode in (("BVI", "bethe", "ground"), ("L-BVI", "bethe", "lifted"),
                                    ("NPVI", "jensen", "ground"), ("L-NPVI", "jensen", "lifted")):
            res = fit(graph, ev, FitConfig(entropy=entropy, mode=mode, K=1, optim=optim))
            x = map_estimate(res.q, last)
            l1 = avg_l1_error({k: truth.means()[k] for k in last}, x)
            kl = avg_univariate_kl({k: exact[k] for k in last}, res.q)
            print(f"{structure:9s} {name:7s} {l1:10.2e} {kl:10.2e}")


if __name__ == "__main__":
    main()
