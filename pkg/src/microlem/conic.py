"""Solver-agnostic container for second-order cone programs.

A :class:`ConicProblem` holds named real variables with optional box
bounds, sparse linear equalities, second-order cones over affine
expressions, and a linear objective.  Every row and cone carries a
``family`` label (e.g. ``"power_flow"``, ``"thd_cone"``) so that an
infeasible problem can be traced back to the constraint group that
caused it.

The backend is the Clarabel interior-point solver.  In Clarabel's
standard form ``A x + s = b,  s in K`` an affine cone head or member is
materialized through the slack equality itself, so cones may be stated
directly over affine expressions.  Feasibility of a returned solution
is always re-checked here from the raw problem data; solver-reported
residuals are recorded but never trusted as the primary evidence.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

INF = float("inf")


class ConicModelError(ValueError):
    """Raised for structurally invalid problem input (bad cone, bad index)."""


@dataclass
class SolveOptions:
    """Feasibility/optimality tolerances passed to the solver.

    ``tol_scale`` multiplies all tolerances; it exists so a CLI or an
    environment variable can loosen/tighten a whole run uniformly.
    """

    tol_feas: float = 1e-8
    tol_gap_abs: float = 1e-9
    tol_gap_rel: float = 1e-9
    max_iter: int = 500
    verbose: bool = False
    tol_scale: float = 1.0

    @classmethod
    def from_env(cls, **overrides) -> "SolveOptions":
        opts = cls(**overrides)
        scale = os.environ.get("MICROLEM_TOL_SCALE")
        if scale is not None:
            opts.tol_scale = float(scale)
        return opts


@dataclass
class Solution:
    """Result of one solve, with residuals recomputed from problem data."""

    status: str  # optimal | infeasible | unbounded | numerical-failure
    objective: float | None
    x: np.ndarray | None
    equality_residual: float
    cone_violation: float
    bound_violation: float
    solver_status: str
    solver_gap_rel: float
    iterations: int
    solve_time: float
    # on infeasible: (family, certificate weight), heaviest first
    infeasibility_report: list[tuple[str, float]] = field(default_factory=list)

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"

    def value(self, idx) -> np.ndarray:
        if self.x is None:
            raise ConicModelError("no primal point available (status %s)" % self.status)
        return self.x[np.asarray(idx, dtype=int)]


class Aff:
    """Scalar affine expression ``sum(coef * x[idx]) + const``."""

    __slots__ = ("idx", "coef", "const")

    def __init__(self, idx=(), coef=(), const=0.0):
        self.idx = np.asarray(idx, dtype=np.int64).ravel()
        self.coef = np.asarray(coef, dtype=float).ravel()
        if self.idx.shape != self.coef.shape:
            raise ConicModelError("affine expression index/coefficient length mismatch")
        self.const = float(const)

    @classmethod
    def var(cls, i, scale=1.0) -> "Aff":
        return cls([int(i)], [float(scale)])

    @classmethod
    def const_expr(cls, c) -> "Aff":
        return cls([], [], float(c))


class ConicProblem:
    """Sparse triplet store for one conic program.

    Variables are added in named blocks; all constraint emitters work
    with plain integer index arrays, so building large blocks stays
    vectorized.  Complex quantities never reach this layer: callers
    split them into (Re, Im) pairs.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self._nvar = 0
        self._blocks: list[tuple[str, int, int]] = []  # (name, start, count)
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        # equalities: list of (row_local, col, val, rhs, family)
        self._eq: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, str]] = []
        self._eq_rows = 0
        # cones: list of (family, dim, count, row_local, col, val, consts)
        self._cones: list[tuple[str, int, int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        self._ncones = 0
        self._obj_idx: list[np.ndarray] = []
        self._obj_coef: list[np.ndarray] = []
        self._cache = None

    # ------------------------------------------------------------------
    # variables
    # ------------------------------------------------------------------
    @property
    def num_variables(self) -> int:
        return self._nvar

    def add_variables(self, count: int, name: str, lb=-INF, ub=INF) -> np.ndarray:
        """Add ``count`` variables; returns their global indices."""
        if count < 0:
            raise ConicModelError("negative variable count")
        start = self._nvar
        self._nvar += count
        self._blocks.append((name, start, count))
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (count,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (count,)).copy())
        self._cache = None
        return np.arange(start, start + count, dtype=np.int64)

    def set_bounds(self, idx, lb=None, ub=None) -> None:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        lball = np.concatenate(self._lb) if self._lb else np.empty(0)
        uball = np.concatenate(self._ub) if self._ub else np.empty(0)
        if lb is not None:
            lball[idx] = np.broadcast_to(np.asarray(lb, dtype=float), idx.shape)
        if ub is not None:
            uball[idx] = np.broadcast_to(np.asarray(ub, dtype=float), idx.shape)
        self._lb = [lball]
        self._ub = [uball]
        self._blocks = self._blocks  # names unchanged
        self._cache = None

    def variable_name(self, i: int) -> str:
        for name, start, count in self._blocks:
            if start <= i < start + count:
                return "%s[%d]" % (name, i - start)
        return "x[%d]" % i

    # ------------------------------------------------------------------
    # rows
    # ------------------------------------------------------------------
    def add_equality_block(self, row_local, col, val, rhs, family: str) -> None:
        """Add ``len(rhs)`` equality rows given as local-row triplets."""
        row_local = np.asarray(row_local, dtype=np.int64).ravel()
        col = np.asarray(col, dtype=np.int64).ravel()
        val = np.asarray(val, dtype=float).ravel()
        rhs = np.asarray(rhs, dtype=float).ravel()
        if not (row_local.shape == col.shape == val.shape):
            raise ConicModelError("equality triplet arrays disagree in length")
        if col.size and (col.max() >= self._nvar or col.min() < 0):
            raise ConicModelError("equality references unknown variable index")
        self._eq.append((row_local, col, val, rhs, family))
        self._eq_rows += rhs.size
        self._cache = None

    def add_equality(self, idx, coef, rhs: float, family: str) -> None:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        self.add_equality_block(np.zeros(idx.size), idx, coef, [rhs], family)

    def add_sparse_equalities(self, mat, cols, rhs, family: str) -> None:
        """Rows ``mat @ x[cols] = rhs`` for a scipy sparse ``mat``."""
        m = sparse.coo_matrix(mat)
        cols = np.asarray(cols, dtype=np.int64).ravel()
        self.add_equality_block(m.row, cols[m.col], m.data, rhs, family)

    # ------------------------------------------------------------------
    # cones
    # ------------------------------------------------------------------
    def add_affine_cone(self, head: Aff, members: list[Aff], family: str) -> int:
        """Register ``||members||_2 <= head``; returns the cone id.

        Head and members may be arbitrary affine expressions; they enter
        the solver through its slack equalities.  An empty member list
        is rejected as a degenerate cone.
        """
        if not members:
            raise ConicModelError("degenerate cone: no members")
        dim = 1 + len(members)
        rows, cols, vals = [], [], []
        consts = np.empty(dim)
        for r, expr in enumerate([head] + list(members)):
            rows.append(np.full(expr.idx.size, r, dtype=np.int64))
            cols.append(expr.idx)
            vals.append(expr.coef)
            consts[r] = expr.const
        cone_id = self._ncones
        self._register_cone_block(
            family, dim, 1, np.concatenate(rows), np.concatenate(cols),
            np.concatenate(vals), consts)
        return cone_id

    def add_cone_block(self, family: str, dim: int, count: int,
                       row_local, col, val, consts) -> None:
        """Bulk form: ``count`` cones of dimension ``dim`` at once.

        Row ``j*dim`` is the head of cone ``j``, rows ``j*dim+1 ..
        j*dim+dim-1`` its members.  ``consts`` has ``count*dim`` entries.
        """
        if dim < 2:
            raise ConicModelError("degenerate cone: no members")
        row_local = np.asarray(row_local, dtype=np.int64).ravel()
        col = np.asarray(col, dtype=np.int64).ravel()
        val = np.asarray(val, dtype=float).ravel()
        consts = np.asarray(consts, dtype=float).ravel()
        if consts.size != dim * count:
            raise ConicModelError("cone constant vector has wrong length")
        self._register_cone_block(family, dim, count, row_local, col, val, consts)

    def _register_cone_block(self, family, dim, count, row_local, col, val, consts):
        if col.size and (col.max() >= self._nvar or col.min() < 0):
            raise ConicModelError("cone references unknown variable index")
        self._cones.append((family, dim, count, row_local, col, val, consts))
        self._ncones += count
        self._cache = None

    # ------------------------------------------------------------------
    # objective
    # ------------------------------------------------------------------
    def add_objective_terms(self, idx, coef) -> None:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        coef = np.asarray(coef, dtype=float).ravel()
        if idx.shape != coef.shape:
            raise ConicModelError("objective index/coefficient length mismatch")
        self._obj_idx.append(idx)
        self._obj_coef.append(coef)
        self._cache = None

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self._nvar)
        for idx, coef in zip(self._obj_idx, self._obj_coef):
            np.add.at(c, idx, coef)
        return c

    # ------------------------------------------------------------------
    # assembly
    # ------------------------------------------------------------------
    def _assemble(self):
        if self._cache is not None:
            return self._cache
        n = self._nvar
        lb = np.concatenate(self._lb) if self._lb else np.empty(0)
        ub = np.concatenate(self._ub) if self._ub else np.empty(0)

        # equalities
        eq_rows, eq_cols, eq_vals, eq_rhs, eq_fams = [], [], [], [], []
        off = 0
        for row_local, col, val, rhs, family in self._eq:
            eq_rows.append(row_local + off)
            eq_cols.append(col)
            eq_vals.append(val)
            eq_rhs.append(rhs)
            eq_fams.append((family, off, rhs.size))
            off += rhs.size
        m_eq = off
        a_eq = sparse.csr_matrix(
            (np.concatenate(eq_vals) if eq_vals else np.empty(0),
             (np.concatenate(eq_rows) if eq_rows else np.empty(0, dtype=np.int64),
              np.concatenate(eq_cols) if eq_cols else np.empty(0, dtype=np.int64))),
            shape=(m_eq, n))
        b_eq = np.concatenate(eq_rhs) if eq_rhs else np.empty(0)

        # finite bounds -> nonnegative-cone rows  (b - A x >= 0)
        fin_ub = np.flatnonzero(np.isfinite(ub))
        fin_lb = np.flatnonzero(np.isfinite(lb))
        m_box = fin_ub.size + fin_lb.size
        box_rows = np.arange(m_box)
        box_cols = np.concatenate([fin_ub, fin_lb])
        box_vals = np.concatenate([np.ones(fin_ub.size), -np.ones(fin_lb.size)])
        a_box = sparse.csr_matrix((box_vals, (box_rows, box_cols)), shape=(m_box, n))
        b_box = np.concatenate([ub[fin_ub], -lb[fin_lb]])

        # cone rows, head-first per cone
        cone_mats, cone_consts, cone_dims, cone_fams = [], [], [], []
        for family, dim, count, row_local, col, val, consts in self._cones:
            mat = sparse.csr_matrix((val, (row_local, col)), shape=(dim * count, n))
            cone_mats.append(mat)
            cone_consts.append(consts)
            cone_dims.extend([dim] * count)
            cone_fams.append((family, dim, count))
        a_cone = (sparse.vstack(cone_mats, format="csr") if cone_mats
                  else sparse.csr_matrix((0, n)))
        d_cone = np.concatenate(cone_consts) if cone_consts else np.empty(0)

        self._cache = dict(
            lb=lb, ub=ub, a_eq=a_eq, b_eq=b_eq, eq_fams=eq_fams,
            a_box=a_box, b_box=b_box, fin_ub=fin_ub, fin_lb=fin_lb,
            a_cone=a_cone, d_cone=d_cone, cone_dims=cone_dims,
            cone_fams=cone_fams)
        return self._cache

    # ------------------------------------------------------------------
    # residual evaluation (independent of the solver)
    # ------------------------------------------------------------------
    def equality_residual(self, x: np.ndarray) -> float:
        z = self._assemble()
        if z["b_eq"].size == 0:
            return 0.0
        return float(np.max(np.abs(z["a_eq"] @ x - z["b_eq"])))

    def bound_violation(self, x: np.ndarray) -> float:
        z = self._assemble()
        lo = np.where(np.isfinite(z["lb"]), z["lb"] - x, -INF)
        hi = np.where(np.isfinite(z["ub"]), x - z["ub"], -INF)
        worst = max(lo.max(initial=-INF), hi.max(initial=-INF))
        return float(max(worst, 0.0))

    def cone_violation(self, x: np.ndarray) -> float:
        z = self._assemble()
        if not z["cone_dims"]:
            return 0.0
        s = z["a_cone"] @ x + z["d_cone"]
        worst = 0.0
        pos = 0
        for dim in z["cone_dims"]:
            block = s[pos:pos + dim]
            worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
            pos += dim
        return max(worst, 0.0)

    def _family_of_conic_row(self, k: int, m_eq: int, m_box: int) -> str:
        z = self._cache
        if k < m_eq:
            for family, off, size in z["eq_fams"]:
                if off <= k < off + size:
                    return family
            return "equality"
        k -= m_eq
        if k < m_box:
            return "bounds"
        k -= m_box
        for family, dim, count in z["cone_fams"]:
            if k < dim * count:
                return family
            k -= dim * count
        return "cone"

    # ------------------------------------------------------------------
    # solve
    # ------------------------------------------------------------------
    def solve(self, options: SolveOptions | None = None) -> Solution:
        """Solve with Clarabel and post-verify the returned point.

        On ``infeasible`` the report lists constraint families weighted
        by the solver's Farkas certificate (best effort).
        """
        opts = options or SolveOptions()
        z = self._assemble()
        n = self._nvar
        a = sparse.vstack([z["a_eq"], z["a_box"], -z["a_cone"]], format="csc")
        b = np.concatenate([z["b_eq"], z["b_box"], z["d_cone"]])
        cones = []
        if z["b_eq"].size:
            cones.append(clarabel.ZeroConeT(int(z["b_eq"].size)))
        if z["b_box"].size:
            cones.append(clarabel.NonnegativeConeT(int(z["b_box"].size)))
        for dim in z["cone_dims"]:
            cones.append(clarabel.SecondOrderConeT(int(dim)))

        settings = clarabel.DefaultSettings()
        settings.verbose = opts.verbose
        settings.max_iter = opts.max_iter
        settings.tol_feas = opts.tol_feas * opts.tol_scale
        settings.tol_gap_abs = opts.tol_gap_abs * opts.tol_scale
        settings.tol_gap_rel = opts.tol_gap_rel * opts.tol_scale

        q = self.objective_vector()
        p = sparse.csc_matrix((n, n))
        solver = clarabel.DefaultSolver(p, q, sparse.csc_matrix(a), b, cones, settings)
        raw = solver.solve()
        status = str(raw.status)

        mapping = {
            "Solved": "optimal",
            "AlmostSolved": "optimal",
            "PrimalInfeasible": "infeasible",
            "AlmostPrimalInfeasible": "infeasible",
            "DualInfeasible": "unbounded",
            "AlmostDualInfeasible": "unbounded",
        }
        mapped = mapping.get(status, "numerical-failure")

        x = np.asarray(raw.x) if mapped == "optimal" else None
        if x is not None:
            eq_res = self.equality_residual(x)
            cone_res = self.cone_violation(x)
            box_res = self.bound_violation(x)
            obj = float(q @ x)
            denom = max(1.0, abs(raw.obj_val), abs(raw.obj_val_dual))
            gap = abs(raw.obj_val - raw.obj_val_dual) / denom
        else:
            eq_res = cone_res = box_res = float("nan")
            obj = None
            gap = float("nan")

        report = []
        if mapped == "infeasible":
            report = self._infeasibility_families(np.asarray(raw.z), z)

        return Solution(
            status=mapped, objective=obj, x=x,
            equality_residual=eq_res, cone_violation=cone_res,
            bound_violation=box_res, solver_status=status,
            solver_gap_rel=gap, iterations=int(raw.iterations),
            solve_time=float(raw.solve_time), infeasibility_report=report)

    def _infeasibility_families(self, z_dual: np.ndarray, z) -> list[tuple[str, float]]:
        m_eq = z["b_eq"].size
        m_box = z["b_box"].size
        weights: dict[str, float] = {}
        if z_dual.size != m_eq + m_box + sum(z["cone_dims"]):
            return []
        scale = np.abs(z_dual).max()
        if not np.isfinite(scale) or scale <= 0:
            return []
        w = np.abs(z_dual) / scale
        for k in np.flatnonzero(w > 1e-6):
            fam = self._family_of_conic_row(int(k), m_eq, m_box)
            weights[fam] = weights.get(fam, 0.0) + float(w[k])
        return sorted(weights.items(), key=lambda kv: -kv[1])

    # ------------------------------------------------------------------
    # interchange dump
    # ------------------------------------------------------------------
    def dump(self, path: str) -> None:
        """Write the full problem as JSON for external cross-checking.

        Schema: ``variables`` (name/start/count/lb/ub per block),
        ``objective`` (index/coefficient arrays), ``equalities``
        (triplets + rhs + family per block) and ``cones`` (family,
        dim, count, triplets, constants; row ``j*dim`` is the head of
        cone ``j``).
        """
        z = self._assemble()
        doc = {
            "format": "microlem-socp",
            "version": 1,
            "num_variables": self._nvar,
            "variables": [
                {"name": name, "start": start, "count": count}
                for name, start, count in self._blocks
            ],
            "lower_bounds": z["lb"].tolist(),
            "upper_bounds": [v if np.isfinite(v) else None for v in z["ub"]],
            "objective": self.objective_vector().tolist(),
            "equalities": [
                {"family": fam, "rows": rl.tolist(), "cols": c.tolist(),
                 "vals": v.tolist(), "rhs": r.tolist()}
                for rl, c, v, r, fam in self._eq
            ],
            "cones": [
                {"family": fam, "dim": dim, "count": count,
                 "rows": rl.tolist(), "cols": c.tolist(),
                 "vals": v.tolist(), "consts": k.tolist()}
                for fam, dim, count, rl, c, v, k in self._cones
            ],
        }
        doc["lower_bounds"] = [v if np.isfinite(v) else None for v in z["lb"]]
        with open(path, "w") as fh:
            json.dump(doc, fh)
