"""Dense/sparse linear programs and a revised-simplex solver.

Minimization convention throughout.  Variables default to [0, +inf) bounds;
constraints are rows of (coefficients, relation, rhs) with relation one of
"<=", ">=", "=".  The solver is a bounded-variable revised simplex with a
two-phase start, Dantzig pricing, and a Bland's-rule fallback once pivots
degenerate for too long.  Pivot ties break toward the lowest variable index
so solves are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SolverError

TAU_FEAS = 1e-7
TAU_OBJ = 1e-6

_RELATIONS = ("<=", ">=", "=")


@dataclass
class LpSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    iterations: int = 0


class LinearProgram:
    """A linear program in row-compressed form.

    Rows are stored sparse as (column indices, values, relation, rhs); the
    solver densifies on demand, which is fine at the problem sizes the
    scenario optimizers produce (a few hundred rows).
    """

    def __init__(self, n_vars: int, objective=None):
        if n_vars < 1:
            raise ValueError("need at least one variable")
        self.n_vars = n_vars
        self.objective = np.zeros(n_vars) if objective is None else np.asarray(objective, dtype=float)
        if self.objective.shape != (n_vars,):
            raise ValueError("objective length must equal n_vars")
        if not np.all(np.isfinite(self.objective)):
            raise ValueError("objective coefficients must be finite")
        self.row_idx: list[np.ndarray] = []
        self.row_val: list[np.ndarray] = []
        self.relations: list[str] = []
        self.rhs: list[float] = []
        self.lo = np.zeros(n_vars)
        self.hi = np.full(n_vars, np.inf)

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def add_constraint(self, coeffs, relation: str, rhs: float) -> None:
        """Add one row.  ``coeffs`` is dense (length n_vars) or (index, value) pairs."""
        if relation not in _RELATIONS:
            raise ValueError(f"relation must be one of {_RELATIONS}")
        if isinstance(coeffs, (list, tuple)) and coeffs and isinstance(coeffs[0], tuple):
            idx = np.array([int(i) for i, _ in coeffs], dtype=np.int64)
            val = np.array([float(v) for _, v in coeffs])
        else:
            dense = np.asarray(coeffs, dtype=float)
            if dense.shape != (self.n_vars,):
                raise ValueError("dense coefficient row has wrong length")
            idx = np.nonzero(dense)[0]
            val = dense[idx]
        if len(idx) == 0:
            raise ValueError("constraint row must have at least one nonzero")
        if np.any(idx < 0) or np.any(idx >= self.n_vars):
            raise ValueError("column index out of range")
        if not (np.all(np.isfinite(val)) and np.isfinite(rhs)):
            raise ValueError("constraint coefficients and rhs must be finite")
        self.row_idx.append(idx)
        self.row_val.append(val)
        self.relations.append(relation)
        self.rhs.append(float(rhs))

    def set_bounds(self, j: int, lo: float, hi: float) -> None:
        if lo > hi:
            raise ValueError("lower bound exceeds upper bound")
        self.lo[j] = lo
        self.hi[j] = hi

    def with_rhs(self, rhs) -> "LinearProgram":
        """Shallow copy sharing rows/bounds but with fresh rhs values.

        Lets callers reuse a constraint template whose structure is fixed and
        only the right-hand side varies (e.g. recourse solves per scenario).
        """
        if len(rhs) != self.n_rows:
            raise ValueError("rhs length must match the row count")
        clone = LinearProgram.__new__(LinearProgram)
        clone.__dict__.update(self.__dict__)
        clone.rhs = [float(v) for v in rhs]
        return clone

    def dense_matrix(self) -> np.ndarray:
        A = np.zeros((self.n_rows, self.n_vars))
        for i, (idx, val) in enumerate(zip(self.row_idx, self.row_val)):
            A[i, idx] = val
        return A

    def dump(self) -> str:
        """Plain-text listing: objective, then one constraint per line."""
        lines = ["min " + " + ".join(f"{c:g}*x{j}" for j, c in enumerate(self.objective) if c != 0.0)]
        for idx, val, rel, rhs in zip(self.row_idx, self.row_val, self.relations, self.rhs):
            terms = " + ".join(f"{v:g}*x{j}" for j, v in zip(idx, val))
            lines.append(f"{terms} {rel} {rhs:g}")
        for j in range(self.n_vars):
            if self.lo[j] != 0.0 or np.isfinite(self.hi[j]):
                lines.append(f"{self.lo[j]:g} <= x{j} <= {self.hi[j]:g}")
        return "\n".join(lines)


# Nonbasic status codes.
_AT_LO, _AT_HI, _FREE, _BASIC = 0, 1, 2, 3


class _Simplex:
    """Bounded-variable revised simplex over an equality system with slacks."""

    def __init__(self, A, b, lo, hi, max_iterations):
        self.A = A
        self.b = b
        self.lo = lo
        self.hi = hi
        self.m, self.n = A.shape
        self.max_iterations = max_iterations
        self.iterations = 0
        self.bland = False
        self._degenerate_streak = 0
        self._bland_threshold = 100 + 10 * self.m
        self._since_refactor = 0

    def start(self, basis, vstat, xval):
        self.basis = np.asarray(basis, dtype=np.int64)
        self.vstat = vstat
        self.xval = xval
        self._refactor()

    def _refactor(self):
        if self.m == 0:
            self.Binv = np.zeros((0, 0))
        else:
            try:
                self.Binv = np.linalg.inv(self.A[:, self.basis])
            except np.linalg.LinAlgError as exc:
                raise SolverError("singular basis during refactorization") from exc
        self._since_refactor = 0
        self._recompute_xB()

    def _recompute_xB(self):
        nb_mask = self.vstat != _BASIC
        rhs = self.b - self.A[:, nb_mask] @ self.xval[nb_mask]
        self.xB = self.Binv @ rhs if self.m else np.zeros(0)

    def optimize(self, c, phase: int) -> str:
        """Run pivots until optimal/unbounded for cost vector ``c``."""
        dj_tol = 1e-9 * (1.0 + np.abs(c).max(initial=0.0))
        piv_tol = 1e-9
        while True:
            if self.iterations >= self.max_iterations:
                raise SolverError(
                    f"iteration cap {self.max_iterations} reached in phase {phase} "
                    f"(m={self.m}, n={self.n}, bland={self.bland})"
                )
            self.iterations += 1
            cB = c[self.basis]
            y = cB @ self.Binv if self.m else np.zeros(0)
            d = c - y @ self.A
            d[self.basis] = 0.0

            at_lo = self.vstat == _AT_LO
            at_hi = self.vstat == _AT_HI
            free = self.vstat == _FREE
            viol = np.zeros(self.n)
            viol[at_lo] = np.maximum(0.0, -d[at_lo])
            viol[at_hi] = np.maximum(0.0, d[at_hi])
            viol[free] = np.abs(d[free])
            eligible = viol > dj_tol
            if not eligible.any():
                return "optimal"
            if self.bland:
                e = int(np.nonzero(eligible)[0][0])
            else:
                e = int(np.argmax(viol))

            increasing = at_lo[e] or (free[e] and d[e] < 0.0)
            sigma = 1.0 if increasing else -1.0
            w = self.Binv @ self.A[:, e] if self.m else np.zeros(0)
            delta = sigma * w

            # Ratio test: basics hitting a bound, or the entering variable
            # flipping to its opposite bound.
            t_basic = np.full(self.m, np.inf)
            hit_lower = delta > piv_tol
            hit_upper = delta < -piv_tol
            if hit_lower.any():
                bi = self.basis[hit_lower]
                t_basic[hit_lower] = (self.xB[hit_lower] - self.lo[bi]) / delta[hit_lower]
            if hit_upper.any():
                bi = self.basis[hit_upper]
                t_basic[hit_upper] = (self.hi[bi] - self.xB[hit_upper]) / (-delta[hit_upper])
            np.maximum(t_basic, 0.0, out=t_basic)
            t_flip = self.hi[e] - self.lo[e] if np.isfinite(self.hi[e]) and np.isfinite(self.lo[e]) else np.inf
            t_min_basic = t_basic.min() if self.m else np.inf
            t_star = min(t_min_basic, t_flip)
            if not np.isfinite(t_star):
                return "unbounded"

            self._degenerate_streak = self._degenerate_streak + 1 if t_star <= 1e-11 else 0
            if self._degenerate_streak > self._bland_threshold:
                self.bland = True

            if t_flip < t_min_basic - 1e-12:
                # Bound flip: no basis change.
                self.xB -= delta * t_flip
                self.xval[e] = self.hi[e] if increasing else self.lo[e]
                self.vstat[e] = _AT_HI if increasing else _AT_LO
                continue

            cands = np.nonzero(t_basic <= t_star + 1e-12)[0]
            r = int(cands[np.argmin(self.basis[cands])])
            leaving = int(self.basis[r])
            enter_val = (self.xval[e] if self.vstat[e] != _BASIC else 0.0) + sigma * t_star
            self.xB -= delta * t_star
            self.xval[leaving] = self.lo[leaving] if hit_lower[r] else self.hi[leaving]
            self.vstat[leaving] = _AT_LO if hit_lower[r] else _AT_HI
            self.basis[r] = e
            self.vstat[e] = _BASIC
            self.xB[r] = enter_val

            # Product-form update of the basis inverse.
            piv = w[r]
            if abs(piv) < 1e-11:
                self._refactor()
                continue
            row = self.Binv[r, :] / piv
            self.Binv -= np.outer(w, row)
            self.Binv[r, :] = row
            self._since_refactor += 1
            if self._since_refactor >= 100:
                self._refactor()

    def solution_vector(self) -> np.ndarray:
        x = self.xval.copy()
        x[self.basis] = self.xB
        return x


def solve_lp(lp: LinearProgram, max_iterations: int | None = None) -> LpSolution:
    """Solve ``lp``; classify as optimal / infeasible / unbounded.

    Returns primal values, objective, and row duals (rate of change of the
    optimal objective per unit of rhs) on the optimal status.
    Raises SolverError on numerical breakdown.
    """
    m = lp.n_rows
    n_slack = sum(rel != "=" for rel in lp.relations)
    n_total = lp.n_vars + n_slack
    A = np.zeros((m, n_total))
    A[:, : lp.n_vars] = lp.dense_matrix()
    b = np.array(lp.rhs)
    lo = np.concatenate([lp.lo, np.zeros(n_slack)])
    hi = np.concatenate([lp.hi, np.full(n_slack, np.inf)])
    slack_of_row = np.full(m, -1, dtype=np.int64)
    slack_sign = np.zeros(m)
    j = lp.n_vars
    for i, rel in enumerate(lp.relations):
        if rel == "=":
            continue
        sign = 1.0 if rel == "<=" else -1.0
        A[i, j] = sign
        slack_of_row[i] = j
        slack_sign[i] = sign
        j += 1

    # Initial nonbasic point: every variable at its finite bound nearest zero.
    xval = np.zeros(n_total)
    vstat = np.full(n_total, _FREE, dtype=np.int8)
    lo_finite = np.isfinite(lo)
    hi_finite = np.isfinite(hi)
    vstat[lo_finite] = _AT_LO
    xval[lo_finite] = lo[lo_finite]
    only_hi = ~lo_finite & hi_finite
    vstat[only_hi] = _AT_HI
    xval[only_hi] = hi[only_hi]

    residual = b - A @ xval
    seed_slack = np.array(
        [s >= 0 and residual[i] / slack_sign[i] >= 0.0 for i, s in enumerate(slack_of_row)],
        dtype=bool,
    ) if m else np.zeros(0, dtype=bool)
    art_rows = np.nonzero(~seed_slack)[0] if m else np.zeros(0, dtype=np.int64)
    n_art = len(art_rows)
    if n_art:
        A_art = np.zeros((m, n_art))
        for k, i in enumerate(art_rows):
            A_art[i, k] = 1.0 if residual[i] >= 0.0 else -1.0
        A = np.hstack([A, A_art])
        lo = np.concatenate([lo, np.zeros(n_art)])
        hi = np.concatenate([hi, np.full(n_art, np.inf)])
        xval = np.concatenate([xval, np.zeros(n_art)])
        vstat = np.concatenate([vstat, np.full(n_art, _AT_LO, dtype=np.int8)])

    # Basis in row order: seeded slack or artificial per row.
    basis_by_row = np.empty(m, dtype=np.int64)
    art_k = 0
    for i in range(m):
        if seed_slack[i]:
            basis_by_row[i] = slack_of_row[i]
        else:
            basis_by_row[i] = n_total + art_k
            art_k += 1
    vstat[basis_by_row] = _BASIC

    if max_iterations is None:
        max_iterations = max(5000, 100 * (m + 1))
    sx = _Simplex(A, b, lo, hi, max_iterations)
    sx.start(basis_by_row, vstat, xval)

    if n_art:
        c1 = np.zeros(A.shape[1])
        c1[n_total:] = 1.0
        status = sx.optimize(c1, phase=1)
        if status != "optimal":
            raise SolverError("phase 1 reported unbounded; artificial objective is bounded below")
        x1 = sx.solution_vector()
        phase1_obj = float(c1 @ x1)
        if phase1_obj > TAU_FEAS * (1.0 + np.abs(b).max(initial=0.0)):
            return LpSolution(status="infeasible", iterations=sx.iterations)
        # Pin artificials at zero for phase 2; any still basic sit at value 0.
        sx.hi[n_total:] = 0.0
        sx.xval[n_total:] = 0.0

    c2 = np.zeros(A.shape[1])
    c2[: lp.n_vars] = lp.objective
    status = sx.optimize(c2, phase=2)
    if status == "unbounded":
        return LpSolution(status="unbounded", iterations=sx.iterations)

    sx._refactor()  # clean basis before extracting the answer
    x_full = sx.solution_vector()
    x = x_full[: lp.n_vars]
    duals = (c2[sx.basis] @ sx.Binv) if m else np.zeros(0)
    obj = float(lp.objective @ x)

    scale = 1.0 + np.abs(b).max(initial=0.0) + np.abs(x).max(initial=0.0)
    resid = np.abs(A[:, : lp.n_vars] @ x + A[:, lp.n_vars:] @ x_full[lp.n_vars:] - b).max(initial=0.0)
    if resid > 1e-5 * scale:
        raise SolverError(f"optimal basis fails feasibility check (residual {resid:.3e})")
    return LpSolution(status="optimal", x=x, objective=obj, duals=duals, iterations=sx.iterations)
