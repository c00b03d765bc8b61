"""How close mean field gets to exact inference as the Potts strength grows.

Small random problems are solved exactly by enumeration and compared with
ten mean-field iterations.

    python3 demos/02_crf_weak_vs_strong.py
"""
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from oracles import crf_tables, exact_crf, labelling_energy  # noqa: E402

from mhparse.crf import CrfConfig, build_problem, mean_field_marginals  # noqa: E402


def problem(rng):
    h, w = rng.integers(2, 4, size=2)
    labels = int(rng.integers(2, 4))
    ids = rng.integers(0, labels, size=(h, w))
    q = np.where(ids > 0, rng.uniform(0.3, 1, (h, w)), rng.uniform(0, 0.7, (h, w)))
    return build_problem(q, ids, labels - 1, rng.normal(size=(h, w, 4)), rng.uniform(size=(h, w, 3)))


def main():
    print(f"{'mu':>6} {'worst |dQ|':>11} {'within 0.05':>12} {'energy ok':>10}")
    for mu in (0.01, 0.05, 0.1, 0.3, 1.0):
        worst, close, good = 0.0, 0, 0
        for seed in range(40):
            p = problem(np.random.default_rng(seed))
            cfg = CrfConfig(potts_strength=mu)
            u, kap = crf_tables(p, cfg)
            exact, e_map, _ = exact_crf(u, kap, mu)
            q = mean_field_marginals(p, cfg)
            d = np.abs(q - exact).max()
            worst = max(worst, d)
            close += d <= 0.05
            good += labelling_energy(q.argmax(1), u, kap, mu) - e_map <= 0.05 * abs(e_map)
        print(f"{mu:6.2f} {worst:11.3f} {close:>9}/40 {good:>7}/40")


if __name__ == "__main__":
    main()
