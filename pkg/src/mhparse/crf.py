"""Dense CRF refinement of person-instance masks with exact mean-field messages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNARY_FLOOR = 1e-9
BACKGROUND_EPS = 1e-3


@dataclass(frozen=True)
class CrfConfig:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    theta: float = 1.0
    theta_bp: float = 20.0
    theta_bi: float = 0.1
    theta_s: float = 3.0
    iterations: int = 10
    potts_strength: float = 1.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("kernel weights must be >= 0")
        if min(self.theta, self.theta_bp, self.theta_bi, self.theta_s) <= 0:
            raise ValueError("bandwidths must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class CrfProblem:
    q: np.ndarray             # H x W foreground probability
    person_masks: np.ndarray  # P x H x W binary
    features: np.ndarray      # H x W x C_F
    image: np.ndarray         # H x W x 3

    @property
    def shape(self):
        return self.q.shape

    @property
    def num_labels(self) -> int:
        return self.person_masks.shape[0] + 1

    def positions(self) -> np.ndarray:
        h, w = self.q.shape
        yy, xx = np.mgrid[0:h, 0:w]
        return np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)


def unary_potentials(problem: CrfProblem) -> np.ndarray:
    """n x L array of ``Psi_u``; column 0 is background."""
    q = problem.q.ravel()
    masks = problem.person_masks.reshape(problem.person_masks.shape[0], -1).astype(np.float64)
    psi = np.empty((q.size, masks.shape[0] + 1))
    psi[:, 0] = (1.0 - q) + BACKGROUND_EPS
    psi[:, 1:] = (q[None, :] * masks + q[None, :]).T
    return psi


def unary_energy(problem: CrfProblem) -> np.ndarray:
    """n x L array of ``-ln Psi_u`` with the floor clamp applied."""
    return -np.log(np.maximum(unary_potentials(problem), UNARY_FLOOR))


def unary(problem: CrfProblem, k: int, i: int) -> float:
    """``Psi_u`` of pixel ``k`` (raster index) taking label ``i``."""
    if not 0 <= i < problem.num_labels:
        raise ValueError(f"label {i} outside [0, {problem.num_labels})")
    return float(unary_potentials(problem)[k, i])


def pairwise_kernel(cfg: CrfConfig, f1, f2, p1, p2, i1, i2) -> float:
    """Kernel between two pixels given learned features, positions and colours."""
    f1, f2, p1, p2, i1, i2 = (np.asarray(v, dtype=np.float64) for v in (f1, f2, p1, p2, i1, i2))
    df = ((f1 - f2) ** 2).sum()
    dp = ((p1 - p2) ** 2).sum()
    di = ((i1 - i2) ** 2).sum()
    return float(cfg.w1 * np.exp(-df / (2 * cfg.theta ** 2))
                 + cfg.w2 * np.exp(-dp / (2 * cfg.theta_bp ** 2) - di / (2 * cfg.theta_bi ** 2))
                 + cfg.w3 * np.exp(-dp / (2 * cfg.theta_s ** 2)))


def _sqdist(a, b):
    return np.maximum((a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T, 0.0)


def kernel_block(cfg: CrfConfig, problem: CrfProblem, rows: slice) -> np.ndarray:
    """Rows of the dense n x n kernel matrix (diagonal left in place)."""
    f = problem.features.reshape(-1, problem.features.shape[-1])
    c = problem.image.reshape(-1, 3)
    p = problem.positions()
    dp = _sqdist(p[rows], p)
    k = np.zeros_like(dp)
    if cfg.w1:
        k += cfg.w1 * np.exp(-_sqdist(f[rows], f) / (2 * cfg.theta ** 2))
    if cfg.w2:
        k += cfg.w2 * np.exp(-dp / (2 * cfg.theta_bp ** 2) - _sqdist(c[rows], c) / (2 * cfg.theta_bi ** 2))
    if cfg.w3:
        k += cfg.w3 * np.exp(-dp / (2 * cfg.theta_s ** 2))
    return k


def kernel_matrix(cfg: CrfConfig, problem: CrfProblem) -> np.ndarray:
    """Dense kernel with a zero diagonal."""
    n = problem.q.size
    k = kernel_block(cfg, problem, slice(0, n))
    np.fill_diagonal(k, 0.0)
    return k


class _Messages:
    """``K @ X`` with zero-diagonal K, cached when small enough."""

    def __init__(self, cfg, problem, cache_limit=4096 * 4096, block=1024):
        self.cfg, self.problem = cfg, problem
        self.n = problem.q.size
        self.block = block
        self.k = kernel_matrix(cfg, problem) if self.n * self.n <= cache_limit else None

    def __call__(self, x):
        if self.k is not None:
            return self.k @ x
        out = np.empty_like(x)
        for s in range(0, self.n, self.block):
            rows = slice(s, min(s + self.block, self.n))
            kb = kernel_block(self.cfg, self.problem, rows)
            kb[np.arange(kb.shape[0]), np.arange(rows.start, rows.stop)] = 0.0
            out[rows] = kb @ x
        return out

    def row_sums(self):
        return self(np.ones((self.n, 1)))[:, 0]


def _softmax_neg(e):
    z = -e - (-e).max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def mean_field_marginals(problem: CrfProblem, cfg: CrfConfig = CrfConfig(), history: bool = False):
    """Mean-field marginals (n x L) after ``cfg.iterations`` parallel updates.

    With Potts compatibility the update of pixel k is
    ``Q_k(l) ~ exp(-U_k(l) - mu * sum_j kappa(k, j) (1 - Q_j(l)))``.
    """
    u = unary_energy(problem)
    q = _softmax_neg(u)
    trace = [q]
    mu = cfg.potts_strength
    if mu == 0.0 or (cfg.w1 == cfg.w2 == cfg.w3 == 0.0):
        return (q, trace) if history else q
    msg = _Messages(cfg, problem)
    total = msg.row_sums()[:, None]
    for _ in range(cfg.iterations):
        agree = msg(q)
        q = _softmax_neg(u + mu * (total - agree))
        if history:
            trace.append(q)
    return (q, trace) if history else q


def mean_field(problem: CrfProblem, cfg: CrfConfig = CrfConfig()) -> np.ndarray:
    """Refined per-pixel labels (H x W, 0 = background)."""
    q = mean_field_marginals(problem, cfg)
    return np.argmax(q, axis=1).reshape(problem.shape)


def energy(problem: CrfProblem, labels, cfg: CrfConfig = CrfConfig(), kernel=None) -> float:
    """CRF energy of a labelling: unary ``-ln Psi_u`` plus Potts-weighted kernel over pixel pairs."""
    lab = np.asarray(labels).ravel()
    u = unary_energy(problem)
    e = u[np.arange(lab.size), lab].sum()
    k = kernel_matrix(cfg, problem) if kernel is None else kernel
    differ = lab[:, None] != lab[None, :]
    return float(e + 0.5 * cfg.potts_strength * (k * differ).sum())


def influence_bound(problem: CrfProblem, cfg: CrfConfig = CrfConfig()) -> np.ndarray:
    """Per-pixel ``potts_strength * sum_j kappa(k, j)``, an upper bound on pairwise pull."""
    return cfg.potts_strength * _Messages(cfg, problem).row_sums()


def build_problem(q, instance_ids, n_persons: int, features, image) -> CrfProblem:
    ids = np.asarray(instance_ids)
    masks = np.stack([ids == i for i in range(1, n_persons + 1)]) if n_persons else np.zeros((0,) + ids.shape, bool)
    return CrfProblem(np.asarray(q, dtype=np.float64), masks.astype(np.float64),
                      np.asarray(features, dtype=np.float64), np.asarray(image, dtype=np.float64))
