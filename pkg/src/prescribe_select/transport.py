"""Min-cost transportation kernel for the shipment recourse problem.

The recourse is a two-tier transportation problem: each facility offers a
"cheap" tier capped by its first-stage stock at the plain shipping cost, and
an uncapacitated "premium" tier at shipping cost plus the second-stage
production price.  This module solves it by successive shortest augmenting
paths with node potentials and returns the optimal flow together with dual
values (demand prices v, capacity prices mu) satisfying Q = v.y - mu.u1.

The kernel is compiled with numba when available; callers verify the duals
against the primal value and fall back to the LP formulation on any mismatch,
so the fast path can never silently disagree with the solver it replaces.
"""

from __future__ import annotations

import numpy as np

_INF = 1e30


def _ssp_kernel(full_cost, cap, demand):
    """Successive shortest paths on the bipartite supply/demand graph.

    full_cost: (K, L) arc costs; cap: (K,) supply capacities (use 1e30 for
    uncapacitated); demand: (L,) requirements.  Returns (flow, pi_s, pi_d).
    """
    K, L = full_cost.shape
    flow = np.zeros((K, L))
    cap_left = cap.copy()
    dem_left = demand.copy()
    pi_s = np.zeros(K)
    pi_d = np.zeros(L)
    # parent pointers for path reconstruction
    par_d = np.empty(L, np.int64)
    par_s = np.empty(K, np.int64)
    dist_s = np.empty(K)
    dist_d = np.empty(L)
    settled_s = np.empty(K, np.bool_)
    settled_d = np.empty(L, np.bool_)

    total_left = 0.0
    for l in range(L):
        total_left += dem_left[l]

    max_aug = 8 * (K + 1) * (L + 1)
    n_aug = 0
    while total_left > 1e-12:
        n_aug += 1
        if n_aug > max_aug:
            return flow, pi_s, pi_d, -2
        for k in range(K):
            dist_s[k] = 0.0 if cap_left[k] > 1e-12 else _INF
            settled_s[k] = False
            par_s[k] = -1
        for l in range(L):
            dist_d[l] = _INF
            settled_d[l] = False
            par_d[l] = -1

        target = -1
        target_dist = _INF
        while True:
            best = _INF
            bk = -1
            bd = -1
            for k in range(K):
                if not settled_s[k] and dist_s[k] < best:
                    best = dist_s[k]
                    bk = k
                    bd = -1
            for l in range(L):
                if not settled_d[l] and dist_d[l] < best:
                    best = dist_d[l]
                    bd = l
                    bk = -1
            if best >= _INF:
                break
            if bd >= 0:
                if dem_left[bd] > 1e-12:
                    target = bd
                    target_dist = best
                    break
                settled_d[bd] = True
                # backward arcs demand -> supply (flow can be pushed back)
                for k in range(K):
                    if not settled_s[k] and flow[k, bd] > 1e-12:
                        nd = best + (pi_d[bd] - full_cost[k, bd] - pi_s[k])
                        if nd < dist_s[k] - 1e-15:
                            dist_s[k] = nd
                            par_s[k] = bd
            else:
                settled_s[bk] = True
                for l in range(L):
                    if not settled_d[l]:
                        nd = best + (full_cost[bk, l] + pi_s[bk] - pi_d[l])
                        if nd < dist_d[l] - 1e-15:
                            dist_d[l] = nd
                            par_d[l] = bk
        if target < 0:
            # demand cannot be met (no uncapacitated tier); signal infeasible
            return flow, pi_s, pi_d, -1
        # potential update keeps all residual reduced costs nonnegative
        for k in range(K):
            d = dist_s[k]
            pi_s[k] += d if d < target_dist else target_dist
        for l in range(L):
            d = dist_d[l]
            pi_d[l] += d if d < target_dist else target_dist

        # reconstruct path and find the bottleneck; only the starting supply
        # consumes capacity (intermediate supplies are entered via backward
        # arcs, so their net outflow is unchanged by the augmentation)
        amt = dem_left[target]
        d = target
        while True:
            k = par_d[d]
            if par_s[k] < 0:
                if amt > cap_left[k]:
                    amt = cap_left[k]
                break
            d = par_s[k]
            if amt > flow[k, d]:
                amt = flow[k, d]
        # apply augmentation
        d = target
        while True:
            k = par_d[d]
            flow[k, d] += amt
            if par_s[k] < 0:
                cap_left[k] -= amt
                break
            d = par_s[k]
            flow[k, d] -= amt
        dem_left[target] -= amt
        total_left -= amt
    return flow, pi_s, pi_d, 0


def _ssp_batch(full_cost, cap, Y):
    """Solve the kernel for one capacity vector against many demand rows.

    Returns per-row objective values, demand duals, supply duals, and status.
    """
    n = Y.shape[0]
    K, L = full_cost.shape
    q_values = np.empty(n)
    v_all = np.empty((n, L))
    mu_all = np.empty((n, K))
    status = np.empty(n, np.int64)
    for i in range(n):
        flow, pi_s, pi_d, st = _ssp_kernel(full_cost, cap, Y[i].copy())
        total = 0.0
        for k in range(K):
            for l in range(L):
                total += full_cost[k, l] * flow[k, l]
        q_values[i] = total
        v_all[i] = pi_d
        mu_all[i] = pi_s
        status[i] = st
    return q_values, v_all, mu_all, status


try:  # pragma: no cover - exercised implicitly by every shipment test
    from numba import njit

    _ssp_kernel = njit(cache=True)(_ssp_kernel)
    _ssp_batch = njit(cache=True)(_ssp_batch)
except ImportError:  # pragma: no cover
    pass


def batch_values_and_duals(full_cost: np.ndarray, premium: float, u1: np.ndarray, Y: np.ndarray):
    """Recourse values and duals for one u1 against many demand rows.

    Rows whose optimality certificate fails are flagged in the returned
    mask so callers can re-solve them through the LP path.  The certificate
    needs no primal flow: dual feasibility plus value equality pins the
    optimum by weak duality.
    """
    F = u1.shape[0]
    cap = np.concatenate([np.asarray(u1, dtype=float), np.full(F, _INF)])
    q, v, mu_full, status = _ssp_batch(full_cost, cap, np.asarray(Y, dtype=float))
    mu = mu_full[:, :F]
    ship_cost = full_cost[:F]
    tol = 1e-6
    ok = status == 0
    ok &= np.all(v >= -tol, axis=1) & np.all(mu >= -tol, axis=1)
    ok &= np.all(v[:, None, :] - mu[:, :, None] <= ship_cost[None] + tol, axis=(1, 2))
    ok &= np.all(v[:, None, :] <= ship_cost[None] + premium + tol, axis=(1, 2))
    dual_val = np.einsum("il,il->i", v, np.asarray(Y, dtype=float)) - mu @ u1
    ok &= np.abs(q - dual_val) <= tol * (1.0 + np.abs(q))
    return q, v, mu, ok


def solve_two_tier(ship_cost: np.ndarray, premium: float, u1: np.ndarray, y: np.ndarray):
    """Solve the two-tier recourse; returns (Q, U2, e, v, mu).

    U2 aggregates cheap and premium shipments per (facility, location); e is
    the premium production per facility.  v and mu are dual prices with
    Q = v.y - mu.u1 and v_l <= c_fl + mu_f, v_l <= c_fl + premium.
    """
    F, L = ship_cost.shape
    full_cost = np.vstack([ship_cost, ship_cost + premium])
    cap = np.concatenate([np.asarray(u1, dtype=float), np.full(F, _INF)])
    flow, pi_s, pi_d, status = _ssp_kernel(full_cost, cap, np.asarray(y, dtype=float))
    if status != 0:
        raise RuntimeError("transportation kernel failed to route all demand")
    q_value = float((full_cost * flow).sum())
    U2 = flow[:F] + flow[F:]
    e = flow[F:].sum(axis=1)
    v = pi_d.copy()
    mu = pi_s[:F].copy()
    return q_value, U2, e, v, mu


def verify_solution(ship_cost, premium, u1, y, q_value, U2, e, v, mu, tol=1e-6) -> bool:
    """Cheap optimality certificate: primal feasible, duals feasible, and
    primal value equal to the dual value (strong duality)."""
    scale = 1.0 + abs(q_value)
    if np.any(U2 < -tol) or np.any(e < -tol) or np.any(v < -tol) or np.any(mu < -tol):
        return False
    if np.any(U2.sum(axis=0) < y - tol * (1.0 + np.abs(y))):
        return False
    if np.any(U2.sum(axis=1) - u1 - e > tol * scale):
        return False
    if np.any(v[None, :] - mu[:, None] > ship_cost + tol):
        return False
    if np.any(v[None, :] > ship_cost + premium + tol):
        return False
    return abs(q_value - (float(v @ y) - float(mu @ u1))) <= tol * scale
