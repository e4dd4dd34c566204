"""Pure-numpy reference kernels, mirroring the compiled versions in `_core`.

Semantics are kept branch-for-branch identical to the Cython kernels so
either backend can be swapped in; the reference versions vectorize over the
problem batch instead of looping in C.
"""

from __future__ import annotations

import numpy as np

_LAM0 = 1e-3
_LAM_MIN = 1e-12
_LAM_MAX = 1e12
_D_FLOOR = 1e-12


def _cost_batch(xy, centers, meas, weights):
    d = np.linalg.norm(xy[:, None, :] - centers[None, :, :], axis=2)
    f = weights * (meas - d)
    return np.einsum("pi,pi->p", f, f)


def gn_localize_batch(anchors, meas, weights, starts, max_iters=100, step_tol=1e-8):
    """Damped Gauss-Newton over a batch of 4-residual range problems.

    anchors: (3, 2) BS1, BS2, IRS coordinates.
    meas:    (P, 4), per problem (rho_1, rho_2, r_1, r_2) range measurements.
    weights: (P, 4) inverse residual standard deviations.
    starts:  (P, S, 2) initial points; the best local minimum over the
             starts is returned per problem.

    Returns (positions (P, 2), costs (P,)).
    """
    anchors = np.asarray(anchors, dtype=float)
    meas = np.asarray(meas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    starts = np.asarray(starts, dtype=float)
    p_n, s_n = starts.shape[:2]
    centers = anchors[[0, 1, 2, 2]]

    best_xy = starts[:, 0, :].copy()
    best_cost = np.full(p_n, np.inf)
    for s in range(s_n):
        xy = starts[:, s, :].copy()
        cost = _cost_batch(xy, centers, meas, weights)
        lam = np.full(p_n, _LAM0)
        done = np.zeros(p_n, dtype=bool)
        for _ in range(max_iters):
            diff = xy[:, None, :] - centers[None, :, :]  # (P, 4, 2)
            d = np.linalg.norm(diff, axis=2)
            f = weights * (meas - d)
            with np.errstate(invalid="ignore", divide="ignore"):
                jac = -(weights / np.maximum(d, _D_FLOOR))[:, :, None] * diff
            jac[d < _D_FLOOR] = 0.0
            a = np.einsum("pij,pik->pjk", jac, jac)
            g = np.einsum("pij,pi->pj", jac, f)
            a00 = a[:, 0, 0] + lam
            a11 = a[:, 1, 1] + lam
            a01 = a[:, 0, 1]
            det = a00 * a11 - a01 * a01
            solvable = det > 0
            det_safe = np.where(solvable, det, 1.0)
            delta = np.empty_like(xy)
            delta[:, 0] = (-a11 * g[:, 0] + a01 * g[:, 1]) / det_safe
            delta[:, 1] = (a01 * g[:, 0] - a00 * g[:, 1]) / det_safe
            cand = xy + delta
            cand_cost = _cost_batch(cand, centers, meas, weights)
            act = ~done
            improved = act & solvable & np.isfinite(cand_cost) & (cand_cost < cost)
            step = np.linalg.norm(delta, axis=1)
            xy[improved] = cand[improved]
            cost[improved] = cand_cost[improved]
            lam[improved] = np.maximum(lam[improved] * 0.1, _LAM_MIN)
            rejected = act & ~improved
            lam[rejected] *= 10.0
            done |= (improved & (step < step_tol)) | (rejected & (lam > _LAM_MAX))
            if done.all():
                break
        better = cost < best_cost
        best_xy[better] = xy[better]
        best_cost[better] = cost[better]
    return best_xy, best_cost


def association_scan(table, perms):
    """Exhaustive minimum of sum_k table[k, pa[k], pb[k], pc[k]] over (a, b, c).

    table: (K, K, K, K) per-target costs indexed (target, lam2, mu1, mu2).
    perms: (F, K) permutations, lexicographically ordered.

    Ties keep the lexicographically first (a, b, c).  Returns
    (best_cost, a, b, c).
    """
    table = np.asarray(table, dtype=float)
    perms = np.asarray(perms, dtype=np.int64)
    k_n = table.shape[0]
    f_n = perms.shape[0]
    # Block over the first axis to bound memory at roughly 64 MB of totals.
    block = max(1, int(8e6 // max(f_n * f_n, 1)))
    best_cost = np.inf
    best = (0, 0, 0)
    cols = [perms[:, k] for k in range(k_n)]
    for a0 in range(0, f_n, block):
        a1 = min(a0 + block, f_n)
        total = np.zeros((a1 - a0, f_n, f_n))
        for k in range(k_n):
            total += table[k][np.ix_(cols[k][a0:a1], cols[k], cols[k])]
        flat = int(np.argmin(total))
        ia, ib, ic = np.unravel_index(flat, total.shape)
        c = float(total[ia, ib, ic])
        if c < best_cost:
            best_cost = c
            best = (int(ia) + a0, int(ib), int(ic))
    return best_cost, best[0], best[1], best[2]
