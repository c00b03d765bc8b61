"""Symmetric eigensolver based on Jacobi rotations."""
from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """Input violates an operation precondition."""


def _round_robin(n: int):
    """Pairings of a round-robin tournament; each round is a set of disjoint pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs], dtype=int),
                       np.array([q for _, q in pairs], dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(m, tol: float = 1e-12, max_sweeps: int = 100):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Rotations are applied in round-robin order so that every round rotates
    disjoint index pairs at once. Iteration stops when the off-diagonal
    Frobenius norm drops below ``tol * max(1, |m|_F)``.

    Returns eigenvalues in ascending order and the matching column eigenvectors.
    """
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = max(1.0, np.linalg.norm(a))
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.sqrt(max(0.0, (a * a).sum() - (a.diagonal() ** 2).sum()))
        if off <= tol * scale:
            break
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            tau = (aqq - app) / (2.0 * apq)
            t = np.sign(tau) / (np.abs(tau) + np.hypot(1.0, tau))
            t[tau == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- J^T A J with J rotating columns p, q
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def sym_eigs(m, k: int, sym_tol: float = 1e-9):
    """The ``k`` smallest eigenpairs of a symmetric matrix.

    Raises ContractError if ``m`` is not symmetric within ``sym_tol`` and
    ValueError if ``k`` is outside ``[1, N]``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    asym = np.abs(m - m.T).max() if n else 0.0
    if asym > sym_tol:
        raise ContractError(f"matrix is not symmetric (max |m - m^T| = {asym:.3g})")
    w, v = jacobi_eigh(0.5 * (m + m.T))
    return w[:k], v[:, :k]
