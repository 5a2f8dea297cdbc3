"""Dense linear programs and a two-phase simplex solver.

Every planning problem in this package is expressed through this module:
the allocation program over the product of per-context simplices, the
pinned variant used when a candidate constraint set is forced active, and
the auxiliary slack programs behind the sensitivity routines.

The solver is deliberately small: dense tableau, two phases with explicit
artificial variables for equalities, Bland's pivoting rule throughout.
Problem sizes here stay below ~50 variables, so determinism and robustness
win over speed.  Identical inputs produce bit-identical solutions.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

# Constraint senses.
LE = "<="
GE = ">="
EQ = "="

_SENSES = (LE, GE, EQ)

# A constraint counts as satisfied when violated by less than this.
TOL_FEAS = 1e-9
# Entries smaller than this are treated as zero during pivoting.
TOL_PIVOT = 1e-10

STATUS_OPTIMAL = "Optimal"
STATUS_INFEASIBLE = "Infeasible"
STATUS_UNBOUNDED = "Unbounded"


class LpStructureError(ValueError):
    """Malformed program: dimension mismatch, bad sense, empty system."""


class LpInputError(ValueError):
    """Numerically invalid program data (NaN or infinite entries)."""


class SolverContractError(RuntimeError):
    """The solver violated its own invariants (pivot limit, singular basis)."""


class LinearProgram:
    """A dense LP in the form: maximize c'x subject to row constraints.

    Parameters
    ----------
    num_vars:
        Number of decision variables.
    objective:
        Coefficient vector of length num_vars; the objective is maximized.
    constraints:
        Sequence of (coefficients, sense, rhs) with sense one of "<=",
        ">=", "=".
    lower_bounds:
        Per-variable lower bounds, default 0.  Must be finite.
    upper_bounds:
        Optional per-variable upper bounds; np.inf entries mean unbounded.
    """

    __slots__ = ("num_vars", "objective", "coeffs", "senses", "rhs",
                 "lower_bounds", "upper_bounds")

    def __init__(self, num_vars: int,
                 objective: Sequence[float],
                 constraints: Sequence[Tuple[Sequence[float], str, float]],
                 lower_bounds: Optional[Sequence[float]] = None,
                 upper_bounds: Optional[Sequence[float]] = None):
        if num_vars < 1:
            raise LpStructureError("program needs at least one variable")
        objective = np.asarray(objective, dtype=float)
        if objective.shape != (num_vars,):
            raise LpStructureError(
                f"objective has shape {objective.shape}, expected ({num_vars},)")
        rows = []
        senses = []
        rhs = []
        for coeffs, sense, b in constraints:
            coeffs = np.asarray(coeffs, dtype=float)
            if coeffs.shape != (num_vars,):
                raise LpStructureError(
                    f"constraint row has shape {coeffs.shape}, expected ({num_vars},)")
            if sense not in _SENSES:
                raise LpStructureError(f"unknown sense {sense!r}")
            rows.append(coeffs)
            senses.append(sense)
            rhs.append(float(b))
        self.num_vars = int(num_vars)
        self.objective = objective
        self.coeffs = (np.vstack(rows) if rows
                       else np.zeros((0, num_vars)))
        self.senses = tuple(senses)
        self.rhs = np.asarray(rhs, dtype=float)
        if lower_bounds is None:
            self.lower_bounds = np.zeros(num_vars)
        else:
            self.lower_bounds = np.asarray(lower_bounds, dtype=float)
            if self.lower_bounds.shape != (num_vars,):
                raise LpStructureError("lower_bounds length mismatch")
        if upper_bounds is None:
            self.upper_bounds = None
        else:
            self.upper_bounds = np.asarray(upper_bounds, dtype=float)
            if self.upper_bounds.shape != (num_vars,):
                raise LpStructureError("upper_bounds length mismatch")
        self._check_finite()

    def _check_finite(self) -> None:
        if not np.isfinite(self.objective).all():
            raise LpInputError("objective contains NaN or infinite entries")
        if not np.isfinite(self.coeffs).all():
            raise LpInputError("constraint matrix contains NaN or infinite entries")
        if not np.isfinite(self.rhs).all():
            raise LpInputError("constraint rhs contains NaN or infinite entries")
        if not np.isfinite(self.lower_bounds).all():
            raise LpInputError("lower bounds must be finite")
        if self.upper_bounds is not None and np.isnan(self.upper_bounds).any():
            raise LpInputError("upper bounds contain NaN")

    @property
    def constraints(self) -> List[Tuple[np.ndarray, str, float]]:
        """Constraint rows as (coefficients, sense, rhs) tuples."""
        return [(self.coeffs[i], self.senses[i], self.rhs[i])
                for i in range(len(self.senses))]

    @property
    def num_constraints(self) -> int:
        return len(self.senses)


class LpSolution:
    """Outcome of solve_lp.

    For an optimal solution, x is a vertex, dual_values holds one shadow
    price per stated constraint (maximization convention: >= 0 for "<="
    rows, <= 0 for ">=" rows, free for "="), and basis is the set of
    original-variable indices that are basic in the final tableau.  For an
    infeasible program, objective_value carries the phase-1 residual as an
    infeasibility certificate.
    """

    __slots__ = ("status", "x", "objective_value", "dual_values", "basis")

    def __init__(self, status: str,
                 x: Optional[np.ndarray],
                 objective_value: float,
                 dual_values: Optional[np.ndarray],
                 basis: frozenset):
        self.status = status
        self.x = x
        self.objective_value = objective_value
        self.dual_values = dual_values
        self.basis = basis

    def __repr__(self) -> str:
        return (f"LpSolution(status={self.status!r}, "
                f"objective_value={self.objective_value!r})")


def _pivot(tableau: np.ndarray, obj_row: np.ndarray,
           basis: np.ndarray, row: int, col: int) -> None:
    """Pivot in place so that column col becomes basic in the given row."""
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    obj_row -= obj_row[col] * tableau[row]
    basis[row] = col


def _run_simplex(tableau: np.ndarray, obj_row: np.ndarray, basis: np.ndarray,
                 allowed: np.ndarray, max_iters: int, tol_pivot: float) -> str:
    """Minimize the objective encoded in obj_row with Bland's rule.

    allowed marks the columns that may enter the basis.  Returns
    "Optimal" or "Unbounded"; raises if the pivot budget is exhausted.
    """
    ncols = tableau.shape[1] - 1
    for _ in range(max_iters):
        candidates = np.nonzero(allowed & (obj_row[:ncols] < -tol_pivot))[0]
        if candidates.size == 0:
            return STATUS_OPTIMAL
        col = int(candidates[0])  # Bland: smallest improving index
        column = tableau[:, col]
        positive = np.nonzero(column > tol_pivot)[0]
        if positive.size == 0:
            return STATUS_UNBOUNDED
        ratios = tableau[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + 1e-12 * (1.0 + abs(best))]
        # Bland again: among tied rows leave the smallest basic index.
        row = int(ties[np.argmin(basis[ties])])
        _pivot(tableau, obj_row, basis, row, col)
    raise SolverContractError(f"simplex exceeded {max_iters} pivots")


def solve_lp(lp: LinearProgram, max_iters: int = 10000,
             tol_feas: float = TOL_FEAS,
             tol_pivot: float = TOL_PIVOT) -> LpSolution:
    """Solve a LinearProgram exactly with a two-phase dense simplex.

    Deterministic for fixed input: Bland's anti-cycling rule fixes the
    vertex reached among alternative optima.  Equality rows go through
    phase-1 artificial variables rather than inequality pairs, so the
    basis stays well-defined on degenerate programs.
    """
    n = lp.num_vars
    shift = lp.lower_bounds
    # Work in shifted variables x' = x - lower_bounds >= 0.
    rows = [lp.coeffs]
    senses = list(lp.senses)
    rhs = [lp.rhs - lp.coeffs @ shift if lp.num_constraints else lp.rhs]
    n_stated = lp.num_constraints
    if lp.upper_bounds is not None:
        bounded = np.nonzero(np.isfinite(lp.upper_bounds))[0]
        if bounded.size:
            extra = np.zeros((bounded.size, n))
            extra[np.arange(bounded.size), bounded] = 1.0
            rows.append(extra)
            senses.extend([LE] * bounded.size)
            rhs.append(lp.upper_bounds[bounded] - shift[bounded])
    coeffs = np.vstack(rows) if n_stated or len(rows) > 1 else np.zeros((0, n))
    rhs = np.concatenate(rhs) if rhs else np.zeros(0)
    m = coeffs.shape[0]

    # Normalize to nonnegative right-hand sides; remember per-row flips so
    # dual values can be mapped back to the stated constraints.
    flips = np.ones(m)
    norm_senses = []
    coeffs = coeffs.copy()
    for i in range(m):
        s = senses[i]
        if rhs[i] < 0:
            coeffs[i] = -coeffs[i]
            rhs[i] = -rhs[i]
            flips[i] = -1.0
            s = {LE: GE, GE: LE, EQ: EQ}[s]
        norm_senses.append(s)

    n_slack = sum(1 for s in norm_senses if s != EQ)
    art_rows = [i for i, s in enumerate(norm_senses) if s != LE]
    n_art = len(art_rows)
    ncols = n + n_slack + n_art

    tableau = np.zeros((m, ncols + 1))
    tableau[:, :n] = coeffs
    tableau[:, -1] = rhs
    basis = np.full(m, -1, dtype=int)
    slack_col = n
    art_col = n + n_slack
    for i, s in enumerate(norm_senses):
        if s == LE:
            tableau[i, slack_col] = 1.0
            basis[i] = slack_col
            slack_col += 1
        elif s == GE:
            tableau[i, slack_col] = -1.0
            slack_col += 1
            tableau[i, art_col] = 1.0
            basis[i] = art_col
            art_col += 1
        else:
            tableau[i, art_col] = 1.0
            basis[i] = art_col
            art_col += 1

    original_rows = np.arange(m)
    a_std = tableau[:, :ncols].copy()
    allowed_all = np.ones(ncols, dtype=bool)
    non_artificial = np.ones(ncols, dtype=bool)
    non_artificial[n + n_slack:] = False

    # Phase 1: drive the artificial variables to zero.
    if n_art:
        obj_row = np.zeros(ncols + 1)
        obj_row[n + n_slack:ncols] = 1.0
        for i in range(m):
            if basis[i] >= n + n_slack:
                obj_row -= tableau[i]
        status = _run_simplex(tableau, obj_row, basis, allowed_all, max_iters,
                              tol_pivot)
        if status != STATUS_OPTIMAL:
            raise SolverContractError("phase-1 program cannot be unbounded")
        residual = -obj_row[-1]
        if residual > tol_feas:
            return LpSolution(STATUS_INFEASIBLE, None, float(residual),
                              None, frozenset())
        # Pivot leftover artificials out of the basis; a row with no
        # eligible column is redundant and gets dropped.
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= n + n_slack:
                row_cols = np.nonzero(
                    non_artificial & (np.abs(tableau[i, :ncols]) > tol_pivot))[0]
                if row_cols.size:
                    _pivot(tableau, obj_row, basis, i, int(row_cols[0]))
                else:
                    keep[i] = False
        if not keep.all():
            tableau = tableau[keep]
            basis = basis[keep]
            original_rows = original_rows[keep]
            a_std = a_std[keep]
        m = tableau.shape[0]

    # Phase 2: minimize -c'x' over the feasible basis found above.
    c_std = np.zeros(ncols)
    c_std[:n] = -lp.objective
    obj_row = np.zeros(ncols + 1)
    obj_row[:ncols] = c_std
    for i in range(m):
        obj_row -= obj_row[basis[i]] * tableau[i]
    status = _run_simplex(tableau, obj_row, basis, non_artificial, max_iters,
                          tol_pivot)
    if status == STATUS_UNBOUNDED:
        return LpSolution(STATUS_UNBOUNDED, None, float("inf"),
                          None, frozenset())

    x_std = np.zeros(ncols)
    x_std[basis] = tableau[:, -1]
    x = x_std[:n] + shift
    objective_value = float(lp.objective @ x)

    # Shadow prices from B' y = c_B on the pre-pivot standard form, mapped
    # back through row flips; internal bound rows are dropped from the report.
    dual_values = np.zeros(lp.num_constraints)
    if m:
        b_mat = a_std[:, basis]
        try:
            y = np.linalg.solve(b_mat.T, c_std[basis])
        except np.linalg.LinAlgError as exc:
            raise SolverContractError("singular final basis") from exc
        for i in range(m):
            orig = original_rows[i]
            if orig < lp.num_constraints:
                dual_values[orig] = -flips[orig] * y[i]

    basic_original = frozenset(int(j) for j in basis if j < n)
    return LpSolution(STATUS_OPTIMAL, x, objective_value,
                      dual_values, basic_original)


def build_alloc_lp(obj_means: np.ndarray, cons_means: np.ndarray,
                   thresholds: np.ndarray) -> LinearProgram:
    """LP over per-context allocation columns with one revenue floor per arm.

    Both mean matrices are K x |C| and already weighted by the context
    probabilities; they may differ (optimistic objective vs pessimistic
    constraints).  Variables are the allocation entries w_{k,c}, flattened
    context-major (index = c*K + k).  The objective is the expected reward
    of the allocation under obj_means; each arm k must earn at least
    thresholds[k] per round under cons_means; each context column must sum
    to one.
    """
    obj_means = np.asarray(obj_means, dtype=float)
    cons_means = np.asarray(cons_means, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if obj_means.ndim != 2:
        raise LpStructureError("obj_means must be a K x C matrix")
    num_arms, num_contexts = obj_means.shape
    if cons_means.shape != obj_means.shape:
        raise LpStructureError(
            f"cons_means shape {cons_means.shape} != obj_means shape {obj_means.shape}")
    if thresholds.shape != (num_arms,):
        raise LpStructureError(
            f"thresholds shape {thresholds.shape}, expected ({num_arms},)")
    kappa = num_arms * num_contexts
    objective = obj_means.T.reshape(-1)
    constraints = []
    for k in range(num_arms):
        row = np.zeros(kappa)
        row[k::num_arms] = cons_means[k]
        constraints.append((row, GE, thresholds[k]))
    for c in range(num_contexts):
        row = np.zeros(kappa)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    return LinearProgram(kappa, objective, constraints)


def build_opt_lp(obj_means: np.ndarray, cons_means: np.ndarray,
                 thresholds: np.ndarray, active_set) -> LinearProgram:
    """Allocation LP with a candidate constraint set forced active.

    Arms in active_set.saturated_arms have their revenue row turned into an
    equality; pairs in active_set.zero_pairs are pinned to zero.  All other
    revenue floors are dropped: only the pinned structure and the simplex
    equalities remain, so with an empty set this reduces to per-context
    argmax of the objective.
    """
    obj_means = np.asarray(obj_means, dtype=float)
    cons_means = np.asarray(cons_means, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    num_arms, num_contexts = obj_means.shape
    if cons_means.shape != obj_means.shape or thresholds.shape != (num_arms,):
        raise LpStructureError("mean/threshold shapes disagree")
    kappa = num_arms * num_contexts
    for k in active_set.saturated_arms:
        if not 0 <= k < num_arms:
            raise LpStructureError(f"saturated arm {k} out of range")
    for k, c in active_set.zero_pairs:
        if not (0 <= k < num_arms and 0 <= c < num_contexts):
            raise LpStructureError(f"zero pair ({k}, {c}) out of range")
    objective = obj_means.T.reshape(-1)
    constraints = []
    for k in active_set.saturated_arms:
        row = np.zeros(kappa)
        row[k::num_arms] = cons_means[k]
        constraints.append((row, EQ, thresholds[k]))
    for k, c in active_set.zero_pairs:
        row = np.zeros(kappa)
        row[c * num_arms + k] = 1.0
        constraints.append((row, EQ, 0.0))
    for c in range(num_contexts):
        row = np.zeros(kappa)
        row[c * num_arms:(c + 1) * num_arms] = 1.0
        constraints.append((row, EQ, 1.0))
    return LinearProgram(kappa, objective, constraints)
