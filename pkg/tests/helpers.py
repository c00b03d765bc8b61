"""Small hand-made inputs shared by several test modules."""
import numpy as np

from mhparse.metrics import SceneEval
from mhparse.scene import LabeledScene

ACCEPTANCE_LINES = []


def report(number, name, ok, detail):
    """Record and print one acceptance verdict line."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def tiny_scene(seed=0):
    """Hand-built two-person 16x16 scene."""
    rng = np.random.default_rng(seed)
    labels = np.zeros((16, 16), int)
    a = np.zeros((16, 16), bool)
    b = np.zeros((16, 16), bool)
    a[2:14, 1:7] = True
    b[3:15, 8:15] = True
    labels[a] = 5
    labels[2:5, 1:7] = 2
    labels[b] = 6
    labels[3:6, 8:15] = 14
    image = 0.2 + 0.1 * rng.uniform(size=(16, 16, 3)) + 0.02 * labels[..., None]
    image[b] *= np.array([1.0, 0.6, 0.6])
    return LabeledScene(image, [a, b], labels).validate()


def random_scene(rng, size=6, max_gt=3, max_extra=2, distinct=True, categories=3):
    """Random part maps for metric tests: GTs, noisy copies and a few spurious predictions."""
    gts = []
    for _ in range(rng.integers(1, max_gt + 1)):
        g = np.where(rng.uniform(size=(size, size)) < 0.4, rng.integers(1, categories + 1, (size, size)), 0)
        g[rng.integers(size), rng.integers(size)] = 1
        gts.append(g)
    preds = []
    for g in gts:
        if rng.uniform() < 0.8:
            p = g.copy()
            flip = rng.uniform(size=g.shape) < rng.uniform(0, 0.5)
            p[flip] = rng.integers(0, categories + 1, flip.sum())
            preds.append(p)
    for _ in range(rng.integers(0, max_extra + 1)):
        preds.append(np.where(rng.uniform(size=(size, size)) < 0.3, rng.integers(1, categories + 1, (size, size)), 0))
    order = rng.permutation(len(preds))
    preds = [preds[i] for i in order]
    conf = list(rng.uniform(size=len(preds))) if distinct else list(rng.choice([0.3, 0.7], size=len(preds)))
    return SceneEval(preds, conf, gts)
