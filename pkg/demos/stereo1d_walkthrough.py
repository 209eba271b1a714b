"""Walk through constraint learning on the two-landmark stereo toy problem.

Run with ``python3 demos/stereo1d_walkthrough.py``.
"""

import numpy as np

from certitight.autotemplate import AutoTemplateOptions, apply_templates, autotemplate
from certitight.autotight import autotight, local_candidate, tightness_report
from certitight.conic import certify
from certitight.problems import generate_setup, make_problem


def main():
    p = make_problem(generate_setup("stereo1d"))
    local = local_candidate(p, np.random.default_rng(1))
    print(f"local minimum theta={local.theta[0]:.5f} cost={local.cost:.5f}")

    rep, _ = tightness_report(p, p.known_constraints(), local.cost, n_known=len(p.known_constraints()))
    print(f"substitution constraints only: RDG={rep.rdg:.3f} ({rep.outcome})")

    basis, rep = autotight(p)
    print(f"learned {len(basis)} constraints on the full problem: RDG={rep.rdg:.2e} ({rep.outcome})")
    for A in basis.matrices():
        print(np.array2string(A.to_dense(), precision=3, suppress_small=True))

    res = autotemplate(p, AutoTemplateOptions(reduce=True))
    for vs, ts in res.library.sets:
        print(f"  {vs.label()}: {len(ts)} template(s)")

    big = make_problem(generate_setup("stereo1d", n=8, seed=5))
    cons = apply_templates(res.library, big)
    local = local_candidate(big, np.random.default_rng(0))
    cert = certify(big.cost_matrix(), cons, big.lift(local.theta))
    print(f"8 landmarks, {len(cons)} constraints: certified={cert.certified} eps={cert.eps:.1e}")


if __name__ == "__main__":
    main()
