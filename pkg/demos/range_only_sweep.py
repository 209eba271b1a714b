"""Learn range-only templates at three positions, then apply them to larger problems.

Run with ``python3 demos/range_only_sweep.py [max_positions]``.
"""

import sys
import time

import numpy as np

from certitight.autotemplate import AutoTemplateOptions, apply_templates, autotemplate
from certitight.autotight import local_candidate, tightness_report
from certitight.problems import generate_setup, make_problem


def main(n_max=12):
    small = make_problem(generate_setup("roloc-y", n=3, seed=0))
    t0 = time.perf_counter()
    res = autotemplate(small, AutoTemplateOptions(reduce=True, reduce_targets=("cost", "rank")))
    print(f"{len(res.library)} templates learned in {time.perf_counter() - t0:.2f}s")
    lib = res.library.reduced("rank")
    print(f"{len(lib)} templates kept for rank tightness")

    print(f"{'N':>3} {'constraints':>11} {'apply s':>8} {'RDG':>10} {'ER':>10}")
    for n in range(3, n_max + 1, 3):
        p = make_problem(generate_setup("roloc-y", n=n, seed=n))
        t0 = time.perf_counter()
        cons = apply_templates(lib, p)
        t_apply = time.perf_counter() - t0
        q_hat = local_candidate(p, np.random.default_rng(0)).cost
        rep, _ = tightness_report(p, cons, q_hat, n_known=len(p.known_constraints()))
        print(f"{n:>3} {len(cons):>11} {t_apply:>8.3f} {rep.rdg:>10.2e} {rep.er:>10.2e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 12)
