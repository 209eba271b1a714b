"""Compare the two substitutions for 2D stereo localization.

The ``z`` lifting becomes tight with learned templates; the ``u`` lifting
does not, whatever redundant constraints are added.
Run with ``python3 demos/stereo2d_liftings.py``.
"""

from certitight.autotemplate import AutoTemplateOptions, autotemplate
from certitight.problems import generate_setup, make_problem


def main():
    for family in ("stereo2d", "stereo2d-u"):
        p = make_problem(generate_setup(family, seed=0))
        res = autotemplate(p, AutoTemplateOptions(max_set_size=3))
        r = res.report
        print(f"{family:>10}: {len(res.library)} templates, RDG={r.rdg:.2e}, ER={r.er:.2e}, {r.outcome}")


if __name__ == "__main__":
    main()
