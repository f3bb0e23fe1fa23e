"""Scenario-based decision problems: multi-product newsvendor and two-stage
shipment planning.

Both problems expose the same surface: a realized cost ``cost(z, y)``, a
feasibility check, and ``solve_weighted(scenarios, weights)`` minimizing the
weighted empirical cost over the feasible set.  Costs are stored lower-is-
better everywhere; profit is the negated cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeasibilityError
from .linprog import LinearProgram, solve_lp
from .transport import batch_values_and_duals, solve_two_tier, verify_solution

TAU_FEAS = 1e-7


# ---------------------------------------------------------------------------
# Multi-product newsvendor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NewsvendorSpec:
    """Prices, procurement costs, storage coefficients, shared capacity."""

    prices: tuple[float, ...] = (500.0, 800.0, 50.0, 10.0)
    costs: tuple[float, ...] = (350.0, 600.0, 30.0, 6.0)
    storage: tuple[float, ...] = (3.0, 15.0, 1.5, 0.5)
    capacity: float = 1200.0

    def __post_init__(self):
        p, c, s = map(np.asarray, (self.prices, self.costs, self.storage))
        if not (len(p) == len(c) == len(s)):
            raise ValueError("prices, costs, storage must share length")
        if not np.all((p > c) & (c > 0)):
            raise ValueError("need p > c > 0 per product")
        if not np.all(s > 0) or self.capacity <= 0:
            raise ValueError("storage coefficients and capacity must be positive")

    @property
    def n_products(self) -> int:
        return len(self.prices)


class NewsvendorProblem:
    """Stock q >= 0 under s.q <= S; cost(q, y) = c.q - p.min(y, q).

    Weighted solves run through two interchangeable paths: an LP with sales
    variables, and a multiplier-search solver using per-product weighted
    quantiles at the critical ratio (p - c - lam*s)/p.  The quantile path is
    the default; the LP path exists as an independent cross-check.
    """

    predictor_layout = "per_output"

    def __init__(self, spec: NewsvendorSpec | None = None):
        self.spec = spec or NewsvendorSpec()
        self.p = np.asarray(self.spec.prices)
        self.c = np.asarray(self.spec.costs)
        self.s = np.asarray(self.spec.storage)
        self.capacity = float(self.spec.capacity)

    @property
    def d_z(self) -> int:
        return self.spec.n_products

    @property
    def d_y(self) -> int:
        return self.spec.n_products

    def cost(self, q, y) -> float:
        q = np.asarray(q, dtype=float)
        y = np.asarray(y, dtype=float)
        return float(self.c @ q - self.p @ np.minimum(y, q))

    def cost_many(self, q, Y) -> np.ndarray:
        """Vectorized cost of a fixed stocking vector over many outcome rows."""
        q = np.asarray(q, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return self.c @ q - np.minimum(Y, q) @ self.p

    def unit_profits(self, q, y) -> np.ndarray:
        """Per-product profit contributions; they sum to -cost(q, y)."""
        q = np.asarray(q, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.p * np.minimum(y, q) - self.c * q

    def cost_rows(self, Z, Y) -> np.ndarray:
        """Realized cost per row for row-wise decisions Z against outcomes Y."""
        Z = np.asarray(Z, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return Z @ self.c - np.minimum(Y, Z) @ self.p

    def unit_profits_rows(self, Z, Y) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return np.minimum(Y, Z) * self.p - Z * self.c

    def check_feasible(self, q, tol: float = TAU_FEAS) -> None:
        q = np.asarray(q, dtype=float)
        if np.any(q < -tol):
            raise FeasibilityError("negative stocking quantity")
        cap_tol = tol * max(1.0, self.capacity)
        used = float(self.s @ q)
        if used > self.capacity + cap_tol:
            raise FeasibilityError(f"storage used {used} exceeds capacity {self.capacity}")

    # -- weighted solves ----------------------------------------------------

    def solve_weighted(self, scenarios, weights, method: str = "quantile") -> np.ndarray:
        """Minimize the weighted empirical cost with shared scenario weights."""
        scenarios = np.asarray(scenarios, dtype=float)
        weights = np.asarray(weights, dtype=float)
        values = [scenarios[:, j] for j in range(self.d_z)]
        wts = [weights] * self.d_z
        return self.solve_weighted_per_output(values, wts, method=method)

    def solve_weighted_per_output(self, values_list, weights_list, method: str = "quantile") -> np.ndarray:
        """Weighted solve with one scenario set and weight vector per product.

        The weighted objective decomposes per product, coupled only through
        the storage knapsack.
        """
        prepped = [_prep_scenarios(v, w) for v, w in zip(values_list, weights_list)]
        if method == "quantile":
            return self._solve_quantile(prepped)
        if method == "lp":
            q, _ = self._solve_lp(prepped)
            return q
        raise ValueError(f"unknown method {method!r}")

    def weighted_cost(self, q, values_list, weights_list) -> float:
        """Weighted empirical cost of a stocking vector (evaluation helper)."""
        q = np.asarray(q, dtype=float)
        total = 0.0
        for j, (v, w) in enumerate(zip(values_list, weights_list)):
            v = np.asarray(v, dtype=float)
            w = np.asarray(w, dtype=float)
            total += self.c[j] * q[j] - self.p[j] * float(w @ np.minimum(v, q[j]))
        return total

    def _quantiles_at(self, prepped, lam: float, shift: float) -> np.ndarray:
        """Per-product optimal stock at multiplier ``lam``.

        ``shift`` nudges the critical ratio: 0 gives the smallest minimizer
        (right limit in lam), +eps the largest (left limit), exposing the
        flat interval at a multiplier where the ratio ties a CDF atom.
        """
        q = np.zeros(self.d_z)
        for j, (vals, cdf) in enumerate(prepped):
            r = (self.p[j] - self.c[j] - lam * self.s[j]) / self.p[j] + shift
            if r <= 1e-15:
                continue
            i = int(np.searchsorted(cdf, r - 1e-12, side="left"))
            q[j] = vals[min(i, len(vals) - 1)]
        return q

    def _solve_quantile(self, prepped) -> np.ndarray:
        q0 = self._quantiles_at(prepped, 0.0, 0.0)
        if self.s @ q0 <= self.capacity + 1e-12 * max(1.0, self.capacity):
            return q0
        # Capacity binds: the optimal multiplier is one of finitely many
        # values where some product's critical ratio ties a CDF atom.
        cands = []
        for j, (vals, cdf) in enumerate(prepped):
            lam_j = (self.p[j] - self.c[j] - self.p[j] * cdf) / self.s[j]
            cands.append(lam_j[lam_j > 0.0])
            cands.append(np.array([(self.p[j] - self.c[j]) / self.s[j]]))
        cands = np.unique(np.concatenate(cands))
        # Smallest candidate whose capacity usage fits (usage is nonincreasing
        # in the multiplier), located by bisection over the candidate grid.
        lo_i, hi_i = 0, len(cands) - 1
        while lo_i < hi_i:
            mid = (lo_i + hi_i) // 2
            if self.s @ self._quantiles_at(prepped, cands[mid], 0.0) <= self.capacity:
                hi_i = mid
            else:
                lo_i = mid + 1
        lam = float(cands[lo_i])
        q_lo = self._quantiles_at(prepped, lam, 0.0)
        q_hi = self._quantiles_at(prepped, lam, 2e-12)
        # All products whose ratio ties an atom at lam are indifferent at
        # margin lam per storage unit; fill remaining capacity among them.
        q = q_lo.copy()
        cap_left = self.capacity - float(self.s @ q_lo)
        for j in range(self.d_z):
            if q_hi[j] > q[j] and cap_left > 1e-12:
                step = min(q_hi[j] - q[j], cap_left / self.s[j])
                q[j] += step
                cap_left -= self.s[j] * step
        return q

    def _solve_lp(self, prepped):
        """Sales-variable LP: m_ij <= y_ij, m_ij <= q_j, s.q <= S."""
        sizes = [len(vals) for vals, _ in prepped]
        offs = np.cumsum([self.d_z] + sizes[:-1])
        n = self.d_z + sum(sizes)
        obj = np.zeros(n)
        obj[: self.d_z] = self.c
        lp = LinearProgram(n)
        for j, (vals, cdf) in enumerate(prepped):
            w = np.diff(cdf, prepend=0.0)
            for i in range(sizes[j]):
                col = offs[j] + i
                obj[col] = -self.p[j] * w[i]
                lp.set_bounds(col, 0.0, float(vals[i]))
                lp.add_constraint([(col, 1.0), (j, -1.0)], "<=", 0.0)
        lp.objective = obj
        lp.add_constraint([(j, float(self.s[j])) for j in range(self.d_z)], "<=", self.capacity)
        sol = solve_lp(lp)
        if sol.status != "optimal":
            raise FeasibilityError(f"newsvendor LP reported {sol.status}")
        return sol.x[: self.d_z], float(sol.objective)


def _prep_scenarios(values, weights):
    """Sort, merge duplicate scenario values, and return (values, cdf)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1:
        raise ValueError("values and weights must be matching 1-d arrays")
    if np.any(weights < -1e-12):
        raise ValueError("weights must be nonnegative")
    keep = weights > 0.0
    values, weights = values[keep], weights[keep]
    if len(values) == 0:
        raise ValueError("weight support is empty")
    total = weights.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"weights must be normalized, sum={total!r}")
    weights = weights / total
    uniq, inv = np.unique(values, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, weights)
    cdf = np.cumsum(merged)
    cdf[-1] = 1.0
    return uniq, cdf


# ---------------------------------------------------------------------------
# Two-stage shipment planning
# ---------------------------------------------------------------------------

@dataclass
class ShipmentSpec:
    """First-stage/recourse prices, revenue, and fixed shipping costs."""

    ship_cost: np.ndarray
    stage1_cost: float = 5.0
    stage2_cost: float = 10.0
    revenue: float = 90.0

    def __post_init__(self):
        self.ship_cost = np.asarray(self.ship_cost, dtype=float)
        if self.ship_cost.ndim != 2:
            raise ValueError("ship_cost must be a facilities x locations matrix")
        if np.any(self.ship_cost < 0):
            raise ValueError("shipping costs must be nonnegative")
        if not (self.stage2_cost > self.stage1_cost > 0):
            raise ValueError("need stage2_cost > stage1_cost > 0")
        if self.revenue <= 0:
            raise ValueError("revenue must be positive")

    @property
    def n_facilities(self) -> int:
        return self.ship_cost.shape[0]

    @property
    def n_locations(self) -> int:
        return self.ship_cost.shape[1]

    @classmethod
    def with_drawn_costs(cls, seed: int, n_facilities: int = 4, n_locations: int = 4,
                         stage1_cost: float = 5.0, stage2_cost: float = 10.0,
                         revenue: float = 90.0) -> "ShipmentSpec":
        """Shipping costs 20 + 2f + Unif[0,3], drawn once per experiment."""
        rng = np.random.default_rng(seed)
        base = 20.0 + 2.0 * np.arange(n_facilities)[:, None]
        xi = rng.uniform(0.0, 3.0, size=(n_facilities, n_locations))
        return cls(ship_cost=base + xi, stage1_cost=stage1_cost,
                   stage2_cost=stage2_cost, revenue=revenue)


class ShipmentProblem:
    """First-stage production u1 >= 0 with recourse shipping/production.

    cost(u1, y) = p1*sum(u1) + Q(u1; y) - a*sum(y), where Q is the optimal
    recourse: ship u2 from facilities to cover demand, producing extra units
    e at the premium price where first-stage stock falls short.
    """

    predictor_layout = "joint"

    #: supports larger than this solve by L-shaped decomposition instead of
    #: one extensive-form LP (the dense simplex basis grows with 8 rows per
    #: scenario; the crossover sits around 15 scenarios).
    extensive_threshold = 16

    def __init__(self, spec: ShipmentSpec):
        self.spec = spec
        self.F = spec.n_facilities
        self.L = spec.n_locations
        self._recourse_template = self._build_recourse_lp()
        self._full_cost = np.vstack([spec.ship_cost, spec.ship_cost + spec.stage2_cost])

    @property
    def d_z(self) -> int:
        return self.F

    @property
    def d_y(self) -> int:
        return self.L

    def _build_recourse_lp(self) -> LinearProgram:
        F, L, sp = self.F, self.L, self.spec
        n = F * L + F  # u2 flattened row-major, then e
        obj = np.concatenate([sp.ship_cost.ravel(), np.full(F, sp.stage2_cost)])
        lp = LinearProgram(n, objective=obj)
        for l in range(L):
            lp.add_constraint([(f * L + l, 1.0) for f in range(F)], ">=", 0.0)
        for f in range(F):
            coeffs = [(f * L + l, -1.0) for l in range(L)] + [(F * L + f, 1.0)]
            lp.add_constraint(coeffs, ">=", 0.0)
        return lp

    def _recourse_solve(self, u1, y):
        rhs = np.concatenate([np.asarray(y, dtype=float), -np.asarray(u1, dtype=float)])
        sol = solve_lp(self._recourse_template.with_rhs(rhs))
        if sol.status != "optimal":
            raise FeasibilityError(f"recourse LP reported {sol.status}")
        return sol

    def second_stage(self, u1, y, method: str = "flow"):
        """Optimal recourse (Q_value, U2, e) for first-stage u1 and demand y.

        The default path solves the equivalent two-tier transportation
        problem and checks its optimality certificate; any failed check falls
        back to the recourse LP, so both methods return the LP optimum.
        """
        u1 = np.asarray(u1, dtype=float)
        y = np.asarray(y, dtype=float)
        if method == "flow":
            q, U2, e, v, mu = self._recourse_flow(u1, y)
            return q, U2, e
        sol = self._recourse_solve(u1, y)
        U2 = sol.x[: self.F * self.L].reshape(self.F, self.L)
        e = sol.x[self.F * self.L:]
        return float(sol.objective), U2, e

    def _recourse_flow(self, u1, y):
        sp = self.spec
        try:
            q, U2, e, v, mu = solve_two_tier(sp.ship_cost, sp.stage2_cost, u1, y)
            ok = verify_solution(sp.ship_cost, sp.stage2_cost, u1, y, q, U2, e, v, mu)
        except RuntimeError:
            ok = False
        if not ok:
            sol = self._recourse_solve(u1, y)
            U2 = sol.x[: self.F * self.L].reshape(self.F, self.L)
            e = sol.x[self.F * self.L:]
            return float(sol.objective), U2, e, sol.duals[: self.L], sol.duals[self.L:]
        return q, U2, e, v, mu

    def _second_stage_duals(self, u1, y):
        """Q value plus duals: v on coverage rows, mu on linking rows.

        Both are nonnegative and satisfy Q = v.y - mu.u1, giving the valid
        lower bound Q(u1') >= v.y - mu.u1' for every u1'.
        """
        u1 = np.asarray(u1, dtype=float)
        y = np.asarray(y, dtype=float)
        q, _, _, v, mu = self._recourse_flow(u1, y)
        return q, v, mu

    def _batch_duals(self, u1, Y):
        """Recourse values and cut duals for many scenarios at one u1.

        Rows failing the fast path's optimality certificate re-solve through
        the recourse LP.
        """
        q, v, mu, ok = batch_values_and_duals(self._full_cost, self.spec.stage2_cost, u1, Y)
        if not ok.all():
            for i in np.nonzero(~ok)[0]:
                sol = self._recourse_solve(u1, Y[i])
                q[i] = float(sol.objective)
                v[i] = sol.duals[: self.L]
                mu[i] = sol.duals[self.L:]
        return q, v, mu

    def recourse_values(self, u1, Y) -> np.ndarray:
        """Q(u1; y) for each outcome row of Y."""
        u1 = np.asarray(u1, dtype=float)
        Y = np.asarray(Y, dtype=float)
        q, _, _ = self._batch_duals(u1, Y)
        return q

    def cost(self, u1, y) -> float:
        u1 = np.asarray(u1, dtype=float)
        y = np.asarray(y, dtype=float)
        Q, _, _ = self.second_stage(u1, y)
        return float(self.spec.stage1_cost * u1.sum() + Q - self.spec.revenue * y.sum())

    def cost_many(self, u1, Y) -> np.ndarray:
        """Vectorized realized cost of a fixed u1 over many outcome rows."""
        u1 = np.asarray(u1, dtype=float)
        Y = np.asarray(Y, dtype=float)
        Q = self.recourse_values(u1, Y)
        return self.spec.stage1_cost * u1.sum() + Q - self.spec.revenue * Y.sum(axis=1)

    def cost_rows(self, Z, Y) -> np.ndarray:
        """Realized cost per row for row-wise first-stage decisions Z."""
        Z = np.asarray(Z, dtype=float)
        Y = np.asarray(Y, dtype=float)
        q_vals = np.array([self._recourse_flow(Z[i], Y[i])[0] for i in range(len(Y))])
        return self.spec.stage1_cost * Z.sum(axis=1) + q_vals - self.spec.revenue * Y.sum(axis=1)

    def unit_profits_rows(self, Z, Y) -> np.ndarray:
        return -self.cost_rows(Z, Y)[:, None]

    def unit_profits(self, u1, y) -> np.ndarray:
        return np.array([-self.cost(u1, y)])

    def check_feasible(self, u1, tol: float = TAU_FEAS) -> None:
        if np.any(np.asarray(u1, dtype=float) < -tol):
            raise FeasibilityError("negative first-stage production")

    # -- weighted solves ----------------------------------------------------

    def solve_weighted(self, scenarios, weights, method: str | None = None) -> np.ndarray:
        """Minimize p1*sum(u1) + sum_i w_i Q(u1; y_i) over u1 >= 0.

        The constant revenue term -a*E[sum(y)] is excluded from the solve and
        re-enters in reported costs.  Scenario counts up to
        ``extensive_threshold`` solve as one extensive-form LP; larger counts
        use L-shaped decomposition with aggregated optimality cuts, which
        reaches the same optimum at desk scale without a dense basis of
        8 rows per scenario.
        """
        scenarios = np.asarray(scenarios, dtype=float)
        weights = np.asarray(weights, dtype=float)
        keep = weights > 0.0
        scenarios, weights = scenarios[keep], weights[keep]
        if len(weights) == 0:
            raise ValueError("weight support is empty")
        if abs(weights.sum() - 1.0) > 1e-6:
            raise ValueError("weights must be normalized")
        weights = weights / weights.sum()
        if method is None:
            method = "extensive" if len(weights) <= self.extensive_threshold else "lshaped"
        if method == "extensive":
            u1, _ = self.solve_weighted_extensive(scenarios, weights)
        elif method == "lshaped":
            u1, _ = self.solve_weighted_lshaped(scenarios, weights)
        else:
            raise ValueError(f"unknown method {method!r}")
        return u1

    def solve_weighted_extensive(self, scenarios, weights):
        """Extensive form: u1 plus per-scenario (U2, e) blocks."""
        F, L, sp = self.F, self.L, self.spec
        n_scen = len(weights)
        block = F * L + F
        n = F + n_scen * block
        obj = np.zeros(n)
        obj[:F] = sp.stage1_cost
        lp = LinearProgram(n)
        for i in range(n_scen):
            base = F + i * block
            obj[base : base + F * L] = weights[i] * sp.ship_cost.ravel()
            obj[base + F * L : base + block] = weights[i] * sp.stage2_cost
            for l in range(L):
                lp.add_constraint(
                    [(base + f * L + l, 1.0) for f in range(F)], ">=", float(scenarios[i, l])
                )
            for f in range(F):
                coeffs = [(f, 1.0), (base + F * L + f, 1.0)]
                coeffs += [(base + f * L + l, -1.0) for l in range(L)]
                lp.add_constraint(coeffs, ">=", 0.0)
        lp.objective = obj
        sol = solve_lp(lp)
        if sol.status != "optimal":
            raise FeasibilityError(f"extensive-form LP reported {sol.status}")
        return sol.x[:F], float(sol.objective)

    def _lshaped_master(self, consts, slopes, u_cap: float):
        """Cutting-plane master min p1.u + theta over theta >= a_t + b_t.u
        and 0 <= u <= u_cap.

        Solved through its dual, which keeps the basis at F+1 rows no matter
        how many cuts accumulate:
            max a.lam - u_cap * sum(eta)
            s.t. sum(lam) = 1;  sum_t lam_t (-b_t)_j - eta_j <= p1;
                 lam, eta >= 0.
        The first-stage point is recovered from the row duals (envelope:
        d(optimum)/d(p1_j) = u_j).  The box makes the master bounded before
        the cuts pin every coordinate; it never binds at the optimum since
        producing beyond the worst-case total demand is wasted.
        """
        T = len(consts)
        F, sp = self.F, self.spec
        obj = np.concatenate([-np.asarray(consts), np.full(F, u_cap)])
        lp = LinearProgram(T + F, objective=obj)
        lp.add_constraint([(t, 1.0) for t in range(T)], "=", 1.0)
        slopes_arr = np.asarray(slopes)
        for j in range(F):
            col = -slopes_arr[:, j]
            nz = [(t, float(col[t])) for t in range(T) if col[t] != 0.0]
            nz.append((T + j, -1.0))
            lp.add_constraint(nz, "<=", sp.stage1_cost)
        sol = solve_lp(lp)
        if sol.status != "optimal":
            raise FeasibilityError(f"L-shaped master reported {sol.status}")
        u1 = np.maximum(0.0, -sol.duals[1 : F + 1])
        return u1, -float(sol.objective)

    def solve_weighted_lshaped(self, scenarios, weights, tol: float = 1e-7, max_iters: int = 400):
        """L-shaped method with aggregated cuts and in-out stabilization.

        Each round evaluates the exact objective (batched recourse kernel)
        at a separation point between the incumbent and the master optimum;
        the point falls back to the plain master optimum when the incumbent
        stalls, which preserves Kelley convergence.  Starts at the
        deterministic solution for the weighted mean scenario.
        """
        scenarios = np.asarray(scenarios, dtype=float)
        weights = np.asarray(weights, dtype=float)
        F, sp = self.F, self.spec
        consts: list[float] = []
        slopes: list[np.ndarray] = []

        y_bar = weights @ scenarios
        u_cap = float(scenarios.sum(axis=1).max(initial=0.0)) + 1.0
        z = np.zeros(F)
        cheapest = np.argmin(sp.ship_cost, axis=0)
        for l in range(self.L):
            z[cheapest[l]] += y_bar[l]
        lb = 0.0
        best_ub = np.inf
        best_u1 = z.copy()
        stalls = 0
        for _ in range(max_iters):
            q, v, mu = self._batch_duals(z, scenarios)
            ub = sp.stage1_cost * z.sum() + float(weights @ q)
            if not np.isfinite(best_ub) or ub < best_ub - 1e-12 * (1.0 + abs(best_ub)):
                best_ub = ub
                best_u1 = z.copy()
                stalls = 0
            else:
                stalls += 1
            if best_ub - lb <= tol * (1.0 + abs(best_ub)):
                return best_u1, float(best_ub)
            consts.append(float(np.einsum("i,il,il->", weights, v, scenarios)))
            slopes.append(-(weights[:, None] * mu).sum(axis=0))
            u_master, lb = self._lshaped_master(consts, slopes, u_cap)
            if best_ub - lb <= tol * (1.0 + abs(best_ub)):
                return best_u1, float(best_ub)
            # in-out: cut at the midpoint toward the incumbent; pure Kelley
            # step after two stalled rounds
            z = u_master if stalls >= 2 else 0.5 * (best_u1 + u_master)
        raise FeasibilityError("L-shaped method failed to converge within the iteration cap")

    def weighted_objective(self, u1, scenarios, weights) -> float:
        """p1*sum(u1) + sum_i w_i Q(u1; y_i), the quantity solve_weighted minimizes."""
        u1 = np.asarray(u1, dtype=float)
        total = self.spec.stage1_cost * float(u1.sum())
        for i in range(len(weights)):
            q_val, _, _ = self.second_stage(u1, scenarios[i])
            total += float(weights[i]) * q_val
        return total
