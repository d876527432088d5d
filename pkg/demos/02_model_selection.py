"""Choose the number of components and knots by leave-one-subject-out cross-validation.

Run:  python3 demos/02_model_selection.py

Fits a 3 x 2 grid of models to one simulated dataset (a few minutes). The
recommendation is the simplest model whose elppd is within one standard
error of the best.
"""

import argparse

from sfpca import SamplerConfig, default_truth, generate, select_models


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=60)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args(argv)

    sim = generate(default_truth().with_scenario(N=args.n, missing=0.3, seed=args.seed))
    cfg = SamplerConfig(chains=4, warmup=300, iters=300, seed=args.seed)

    def progress(cell):
        tag = "failed: " + cell.reason if cell.failed else f"elppd {cell.fit.loo.elppd:.1f}"
        print(f"  {cell.name:<16} {tag}")

    sel = select_models(sim.data, [1, 2, 3], [1, 2], cfg, time_range=(0, 1), on_cell=progress)

    print(f"\n{'model':<16}{'elppd':>9}{'SE':>7}{'delta':>9}{'SE(d)':>8}")
    for r in sel.table:
        print(f"pcs={r['pcs']},knots={r['knots']:<6}{r['elppd']:9.1f}{r['se']:7.1f}"
              f"{r['delta']:9.1f}{r['se_delta']:8.1f}")
    print(f"\nbest elppd: {sel.best.name}; recommended: {sel.recommended.name} (truth: pcs=2,knots=1)")


if __name__ == "__main__":
    main()
