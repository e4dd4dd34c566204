"""Data association and per-target trilateration.

Phase II receives four range sets (direct ranges and composed path lengths,
per BS) and must decide which entry belongs to which target before the
targets can be trilaterated.  The key structural fact: the surface-target
distance of a target can be inferred through either BS as

    r_m = D_m_composed(mu) - D_m_direct(lam) - d_ai[m],

and both inferences must agree for the true association.  Candidates whose
two inferences differ by more than ``tau`` for any target are pruned before
any nonlinear solve runs; the survivors are scored by a weighted
least-squares cost at their Gauss-Newton position estimates, and the
minimum-cost candidate wins.

Rank conventions follow descending order: index ``a`` (0-based) selects the
(a+1)-th largest entry of a set.  Target labels are quotiented out by fixing
the BS-1 direct assignment to the identity, which shrinks the search space
from (K!)^4 to (K!)^3 without losing any distinct solution.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import LocalizationError, NoConsistentAssociationError
from .recovery import RangeSets
from .scene import Scenario, SystemConfig


@dataclass
class Association:
    """Rank assignments ``lam[m, k]`` / ``mu[m, k]`` (0-based, descending).

    Row ``m`` of each array is a permutation of ``range(K)``: target ``k``
    owns the ``lam[m, k]``-th largest direct range and the ``mu[m, k]``-th
    largest composed path length at BS ``m``.
    """

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.int64)
        self.mu = np.asarray(self.mu, dtype=np.int64)
        k = self.lam.shape[1]
        ident = np.arange(k)
        for name, arr in (("lam", self.lam), ("mu", self.mu)):
            if arr.shape != (2, k):
                raise ValueError(f"{name} must have shape (2, K)")
            for m in range(2):
                if not np.array_equal(np.sort(arr[m]), ident):
                    raise ValueError(f"{name}[{m}] is not a permutation of range({k})")

    @property
    def n_targets(self) -> int:
        return self.lam.shape[1]

    def key(self) -> tuple:
        """Lexicographic tie-break key (BS-1 direct ranks first)."""
        return tuple(self.lam[0]) + tuple(self.lam[1]) + tuple(self.mu[0]) + tuple(self.mu[1])


@dataclass
class NoiseModel:
    """Range-error variances: ``sigma_at_sq[m, k]`` for the direct ranges and
    ``sigma_it_sq[m, k]`` for the surface-range inferences."""

    sigma_at_sq: np.ndarray
    sigma_it_sq: np.ndarray

    def __post_init__(self):
        self.sigma_at_sq = np.asarray(self.sigma_at_sq, dtype=float)
        self.sigma_it_sq = np.asarray(self.sigma_it_sq, dtype=float)
        if np.any(self.sigma_at_sq <= 0) or np.any(self.sigma_it_sq <= 0):
            raise ValueError("variances must be positive")

    @classmethod
    def from_quantization(cls, config: SystemConfig, k_targets: int) -> "NoiseModel":
        """Variances of uniform bin-quantization errors.

        Direct ranges quantize on the round-trip grid; a surface-range
        inference inherits the composed-path and direct-range quantization
        (the BS-IRS leg is known exactly).
        """
        w_rt = config.round_trip_bin_m
        w_ow = config.one_way_bin_m
        at = np.full((2, k_targets), w_rt**2 / 12.0)
        it = np.full((2, k_targets), (w_rt**2 + w_ow**2) / 12.0)
        return cls(sigma_at_sq=at, sigma_it_sq=it)


@dataclass
class LocalizationResult:
    """Estimated positions with the winning association and its cost."""

    positions: np.ndarray  # (K, 2)
    association: Association
    cost: float
    per_target_cost: np.ndarray  # (K,)
    n_candidates: int = 1
    mode: str = "pruned"


def _anchor_array(anchors) -> np.ndarray:
    if isinstance(anchors, Scenario):
        return anchors.anchor_array()
    a = np.asarray(anchors, dtype=float)
    if a.shape != (3, 2):
        raise ValueError("anchors must be a Scenario or a (3, 2) array: BS1, BS2, IRS")
    return a


def _descending(range_sets: RangeSets) -> tuple[list[np.ndarray], list[np.ndarray]]:
    at = [np.asarray(range_sets.d_at[m], dtype=float)[::-1] for m in range(2)]
    aita = [np.asarray(range_sets.d_aita[m], dtype=float)[::-1] for m in range(2)]
    return at, aita


def irs_range(range_sets: RangeSets, lam, mu, m: int, k: int, d_ai) -> float:
    """Surface-target distance inferred through BS ``m`` for target ``k``."""
    at, aita = _descending(range_sets)
    lam = np.asarray(lam)
    mu = np.asarray(mu)
    return float(aita[m][mu[m, k]] - at[m][lam[m, k]] - float(d_ai[m]))


def residual_and_jacobian(xy, anchors, meas, weights):
    """Weighted range residuals and their Jacobian at ``xy``.

    Residual i is ``weights[i] * (meas[i] - dist(xy, center_i))`` with
    centers (BS1, BS2, IRS, IRS).  Used by the reference Gauss-Newton and by
    derivative checks.
    """
    a = _anchor_array(anchors)
    centers = a[[0, 1, 2, 2]]
    xy = np.asarray(xy, dtype=float)
    meas = np.asarray(meas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    diff = xy[None, :] - centers
    d = np.linalg.norm(diff, axis=1)
    f = weights * (meas - d)
    with np.errstate(invalid="ignore", divide="ignore"):
        jac = -(weights / np.maximum(d, 1e-12))[:, None] * diff
    jac[d < 1e-12] = 0.0
    return f, jac


def _circle_starts(a1, a2, irs, rho1, rho2):
    """Multi-start points: the two direct-range circle intersections ordered
    IRS-near first, then the surface itself.  Vectorized over the batch."""
    rho1 = np.asarray(rho1, dtype=float)
    rho2 = np.asarray(rho2, dtype=float)
    axis = a2 - a1
    d = float(np.linalg.norm(axis))
    u = axis / d
    n = np.array([-u[1], u[0]])
    along = (rho1**2 - rho2**2 + d * d) / (2.0 * d)
    h = np.sqrt(np.maximum(rho1**2 - along**2, 0.0))
    base = a1[None, :] + along[..., None] * u[None, :]
    p_plus = base + h[..., None] * n[None, :]
    p_minus = base - h[..., None] * n[None, :]
    plus_near = np.linalg.norm(p_plus - irs[None, :], axis=-1) <= np.linalg.norm(
        p_minus - irs[None, :], axis=-1
    )
    near = np.where(plus_near[..., None], p_plus, p_minus)
    far = np.where(plus_near[..., None], p_minus, p_plus)
    irs_start = np.broadcast_to(irs, near.shape)
    return np.stack([near, far, irs_start], axis=-2)  # (P, 3, 2)


def _weights_for_targets(noise: NoiseModel, targets: np.ndarray) -> np.ndarray:
    """(P, 4) inverse residual standard deviations for the given target labels."""
    w_at = 1.0 / np.sqrt(noise.sigma_at_sq)  # (2, K)
    w_it = 1.0 / np.sqrt(noise.sigma_it_sq)
    return np.stack(
        [w_at[0, targets], w_at[1, targets], w_it[0, targets], w_it[1, targets]], axis=-1
    )


def _gn_batch(anchors, meas, weights):
    a = _anchor_array(anchors)
    starts = _circle_starts(a[0], a[1], a[2], meas[:, 0], meas[:, 1])
    return _kernels.gn_localize_batch(a, meas, weights, starts)


def localize(
    association: Association,
    range_sets: RangeSets,
    d_ai,
    anchors,
    noise: NoiseModel,
) -> LocalizationResult:
    """Trilaterate every target under a fixed association.

    Each target is solved independently by damped Gauss-Newton from three
    starts; the cost is the summed weighted squared range residuals at the
    returned positions.  Raises :class:`LocalizationError` if any target's
    solve fails to produce a finite optimum.
    """
    at, aita = _descending(range_sets)
    d_ai = np.asarray(d_ai, dtype=float)
    k_n = association.n_targets
    targets = np.arange(k_n)
    rho1 = at[0][association.lam[0]]
    rho2 = at[1][association.lam[1]]
    r1 = aita[0][association.mu[0]] - rho1 - d_ai[0]
    r2 = aita[1][association.mu[1]] - rho2 - d_ai[1]
    meas = np.stack([rho1, rho2, r1, r2], axis=1)
    weights = _weights_for_targets(noise, targets)
    pos, cost = _gn_batch(anchors, meas, weights)
    if not np.all(np.isfinite(cost)):
        bad = np.flatnonzero(~np.isfinite(cost))
        raise LocalizationError(f"localization failure for targets {bad.tolist()}")
    return LocalizationResult(
        positions=pos,
        association=association,
        cost=float(cost.sum()),
        per_target_cost=cost,
    )


def _pair_diff(at, aita, d_ai):
    """diff[k, b, c, d] = r_1(k, c) - r_2(b, d): the two surface-range
    inferences for a target holding ranks (k, b, c, d)."""
    k_n = len(at[0])
    r1 = aita[0][None, :] - at[0][:, None] - d_ai[0]  # (k, c)
    r2 = aita[1][None, :] - at[1][:, None] - d_ai[1]  # (b, d)
    return r1[:, None, :, None] - r2[None, :, None, :], k_n


def enumerate_feasible(range_sets: RangeSets, d_ai, tau) -> list[Association]:
    """All associations whose dual surface-range inferences agree within tau.

    BS-1 direct ranks are fixed to the identity (label quotient).  The
    remaining three rank permutations are enumerated depth-first over the
    per-target feasible rank triples, so infeasible prefixes are never
    expanded.  Raises :class:`NoConsistentAssociationError` when empty.
    """
    k_n = range_sets.common_size()
    at, aita = _descending(range_sets)
    d_ai = np.asarray(d_ai, dtype=float)
    tau_k = np.broadcast_to(np.asarray(tau, dtype=float), (k_n,))
    diff, _ = _pair_diff(at, aita, d_ai)
    feasible = [np.argwhere(np.abs(diff[k]) <= tau_k[k]) for k in range(k_n)]

    out: list[Association] = []
    lam2 = np.empty(k_n, dtype=np.int64)
    mu1 = np.empty(k_n, dtype=np.int64)
    mu2 = np.empty(k_n, dtype=np.int64)
    used = np.zeros((3, k_n), dtype=bool)

    def descend(k: int):
        if k == k_n:
            ident = np.arange(k_n)
            out.append(
                Association(
                    lam=np.stack([ident, lam2.copy()]),
                    mu=np.stack([mu1.copy(), mu2.copy()]),
                )
            )
            return
        for b, c, d in feasible[k]:
            if used[0, b] or used[1, c] or used[2, d]:
                continue
            used[0, b] = used[1, c] = used[2, d] = True
            lam2[k], mu1[k], mu2[k] = b, c, d
            descend(k + 1)
            used[0, b] = used[1, c] = used[2, d] = False

    descend(0)
    if not out:
        raise NoConsistentAssociationError(
            f"no consistent association within tau={np.max(tau_k):g} m"
        )
    return out


def _tuple_table(at, aita, d_ai, noise, tuples):
    """Gauss-Newton positions/costs for per-target rank tuples (k, b, c, d)."""
    k_idx = tuples[:, 0]
    rho1 = at[0][k_idx]
    rho2 = at[1][tuples[:, 1]]
    r1 = aita[0][tuples[:, 2]] - rho1 - d_ai[0]
    r2 = aita[1][tuples[:, 3]] - rho2 - d_ai[1]
    meas = np.stack([rho1, rho2, r1, r2], axis=1)
    weights = _weights_for_targets(noise, k_idx)
    return meas, weights


def solve(
    range_sets: RangeSets,
    d_ai,
    anchors,
    noise: NoiseModel,
    tau=1.5,
    mode: str = "pruned",
) -> LocalizationResult:
    """Minimum-cost association and the resulting target positions.

    ``mode="pruned"`` searches only candidates passing the dual-inference
    consistency test; ``mode="exhaustive"`` scores every label-quotiented
    rank assignment -- (K!)^3 candidates, practical up to K of about 5 or 6.
    Ties break to the lexicographically smallest association; per-tuple
    Gauss-Newton solves are shared across candidates.
    """
    if mode not in ("pruned", "exhaustive"):
        raise ValueError(f"unknown mode {mode!r}")
    k_n = range_sets.common_size()
    at, aita = _descending(range_sets)
    d_ai = np.asarray(d_ai, dtype=float)
    anchors = _anchor_array(anchors)

    if mode == "exhaustive":
        grids = np.meshgrid(*([np.arange(k_n)] * 4), indexing="ij")
        tuples = np.stack([g.ravel() for g in grids], axis=1)  # (K^4, 4)
        meas, weights = _tuple_table(at, aita, d_ai, noise, tuples)
        pos, cost = _gn_batch(anchors, meas, weights)
        table = cost.reshape((k_n,) * 4)
        perms = np.array(list(itertools.permutations(range(k_n))), dtype=np.int64)
        best_cost, ia, ib, ic = _kernels.association_scan(table, perms)
        if not np.isfinite(best_cost):
            raise LocalizationError("every exhaustive candidate failed to localize")
        ident = np.arange(k_n)
        assoc = Association(
            lam=np.stack([ident, perms[ia]]), mu=np.stack([perms[ib], perms[ic]])
        )
        flat = np.ravel_multi_index(
            (ident, perms[ia], perms[ib], perms[ic]), (k_n,) * 4
        )
        result = LocalizationResult(
            positions=pos[flat],
            association=assoc,
            cost=float(best_cost),
            per_target_cost=cost[flat],
            n_candidates=len(perms) ** 3,
            mode=mode,
        )
        return result

    candidates = enumerate_feasible(range_sets, d_ai, tau)
    rows = np.stack(
        [
            np.stack(
                [np.arange(k_n), c.lam[1], c.mu[0], c.mu[1]], axis=1
            )
            for c in candidates
        ]
    )  # (C, K, 4)
    uniq, inverse = np.unique(rows.reshape(-1, 4), axis=0, return_inverse=True)
    meas, weights = _tuple_table(at, aita, d_ai, noise, uniq)
    pos_u, cost_u = _gn_batch(anchors, meas, weights)
    per_cand = cost_u[inverse].reshape(len(candidates), k_n)
    totals = per_cand.sum(axis=1)

    best = None
    for idx, cand in enumerate(candidates):
        t = totals[idx]
        if not np.isfinite(t):
            continue
        entry = (t, cand.key(), idx)
        if best is None or entry < best:
            best = entry
    if best is None:
        raise LocalizationError("every feasible candidate failed to localize")
    idx = best[2]
    rows_idx = inverse.reshape(len(candidates), k_n)[idx]
    return LocalizationResult(
        positions=pos_u[rows_idx],
        association=candidates[idx],
        cost=float(totals[idx]),
        per_target_cost=per_cand[idx],
        n_candidates=len(candidates),
        mode=mode,
    )
