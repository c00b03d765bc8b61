from __future__ import annotations

import numpy as np


class EvaluationError(ArithmeticError):
    pass


def grad_check(f, params, eps: float = 1e-4, max_coords: int | None = None, seed: int = 0) -> float:
    """Compare analytic gradients against central differences.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` has the same
    structure as ``params`` (a single array or a name -> array dict). The
    return value is the largest ``|analytic - numeric| / max(1, |numeric|)``.
    With ``max_coords`` only that many randomly chosen entries per tensor
    are probed.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError(f"eps={eps} outside [1e-6, 1e-3]")
    single = not isinstance(params, dict)
    p = {"x": np.array(params, dtype=np.float64)} if single else {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def call(q):
        value, grads = f(q["x"] if single else q)
        value = float(value)
        if not np.isfinite(value):
            raise EvaluationError(f"non-finite objective value {value}")
        return value, ({"x": np.asarray(grads)} if single else grads)

    _, analytic = call(p)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in p.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        g = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            up, _ = call(p)
            flat[i] = old - eps
            down, _ = call(p)
            flat[i] = old
            numeric = (up - down) / (2.0 * eps)
            worst = max(worst, abs(g[i] - numeric) / max(1.0, abs(numeric)))
    return worst
