"""Linearized unbalanced power flow and its nonlinear validation oracle.

The exact nodal relation is ``S* = diag(V*) (Y V)``.  Treating ``v`` and
``v*`` as independent variables and expanding to first order around a
linearization voltage ``V_l`` gives the affine map

    S*(V) ~= R V* + U V + Z,
    R = diag(Y V_l),  U = diag(V_l*) Y,  Z = -diag(V_l*) (Y V_l),

which is exact at ``V = V_l``.  (The constant term must carry the
conjugate on ``V_l``; the expansion is then reproduced term by term
from the scalar form ``y_km (v_m0 v_k* + v_k0* v_m - v_k0* v_m0)``.)

All constraint emitters split complex rows into (Re, Im) pairs so that
the conic layer stays real-valued.  The fixed-point oracle
:func:`nonlinear_pf_oracle` solves the exact equations and is the
reference for linearization-accuracy checks; it shares no code with the
affine path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conic import ConicProblem
from .network import HOURS, ModelError

PHASE_ANGLES = (0.0, -2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0)


def slack_values() -> np.ndarray:
    """Unit-magnitude balanced slack set 1<0, 1<-120, 1<+120 degrees."""
    return np.exp(1j * np.array(PHASE_ANGLES))


def flat_profile(n_nodes: int) -> np.ndarray:
    """Balanced flat linearization voltage for a 3n system."""
    return np.repeat(slack_values(), n_nodes)


def slack_indices(n_nodes: int) -> np.ndarray:
    return np.array([p * n_nodes for p in range(3)], dtype=np.int64)


@dataclass
class LinearizationPoint:
    v_l: np.ndarray  # complex 3n

    def __post_init__(self):
        self.v_l = np.asarray(self.v_l, dtype=complex).ravel()
        mags = np.abs(self.v_l)
        if np.any(mags <= 0.5) or np.any(mags >= 1.5):
            raise ModelError("linearization voltages must stay near nominal "
                             "(got magnitudes outside (0.5, 1.5) pu)")


@dataclass
class AffinePowerFlow:
    """Constant triple (R, U, Z); R is diagonal and stored as a vector."""

    r_diag: np.ndarray   # complex 3n
    u: np.ndarray        # complex 3n x 3n
    z: np.ndarray        # complex 3n
    v_l: np.ndarray      # expansion point, kept for diagnostics

    @property
    def size(self) -> int:
        return self.r_diag.size

    def evaluate_conj(self, v: np.ndarray) -> np.ndarray:
        """Affine approximation of S* at voltage v."""
        return self.r_diag * np.conj(v) + self.u @ v + self.z

    def injection(self, v: np.ndarray) -> np.ndarray:
        """Affine approximation of the net injected power S."""
        return np.conj(self.evaluate_conj(v))


def exact_injection(y3p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact nonlinear net injection S = V o conj(Y V)."""
    return v * np.conj(y3p @ v)


def linearize(y3p: np.ndarray, point: LinearizationPoint) -> AffinePowerFlow:
    v_l = point.v_l
    if y3p.shape != (v_l.size, v_l.size):
        raise ModelError("admittance/linearization-point dimension mismatch")
    yv = y3p @ v_l
    r_diag = yv
    u = np.conj(v_l)[:, None] * y3p
    z = -np.conj(v_l) * yv
    return AffinePowerFlow(r_diag=r_diag, u=u, z=z, v_l=v_l.copy())


# ---------------------------------------------------------------------------
# real-split coefficient blocks
# ---------------------------------------------------------------------------

@dataclass
class PfRowBlocks:
    """Real split of ``S* - R V* - U V = Z``.

    Row k (real part):  S_re[k] + c_vre_re[k,:] V_re + c_vim_re[k,:] V_im = rhs_re[k]
    Row k (imag part): -S_im[k] + c_vre_im[k,:] V_re + c_vim_im[k,:] V_im = rhs_im[k]
    """

    c_vre_re: np.ndarray
    c_vim_re: np.ndarray
    c_vre_im: np.ndarray
    c_vim_im: np.ndarray
    rhs_re: np.ndarray
    rhs_im: np.ndarray


def pf_row_blocks(aff: AffinePowerFlow) -> PfRowBlocks:
    r_re, r_im = aff.r_diag.real, aff.r_diag.imag
    u_re, u_im = aff.u.real, aff.u.imag
    d = np.diag
    return PfRowBlocks(
        c_vre_re=-d(r_re) - u_re,
        c_vim_re=-d(r_im) + u_im,
        c_vre_im=-d(r_im) - u_im,
        c_vim_im=d(r_re) - u_re,
        rhs_re=aff.z.real.copy(),
        rhs_im=aff.z.imag.copy(),
    )


def _emit_dense_rows(problem: ConicProblem, row_base: np.ndarray,
                     mats_cols: list[tuple[np.ndarray, np.ndarray]],
                     rhs: np.ndarray, family: str) -> None:
    """Triplet emission of dense coefficient panels sharing row ids."""
    rows, cols, vals = [], [], []
    for mat, col_idx in mats_cols:
        nz = np.nonzero(mat)
        rows.append(row_base[nz[0]])
        cols.append(col_idx[nz[1]])
        vals.append(mat[nz])
    problem.add_equality_block(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        rhs, family)


def pf_equality_rows(problem: ConicProblem, aff: AffinePowerFlow,
                     v_idx: np.ndarray, s_idx: np.ndarray,
                     family: str = "power_flow") -> None:
    """Emit the 6n real power-flow rows for one hour.

    ``v_idx``/``s_idx`` have shape (3n, 2) holding the (Re, Im) variable
    indices of the nodal voltages and net injections.
    """
    b = pf_row_blocks(aff)
    m = aff.size
    eye = np.eye(m)
    rows_re = np.arange(m, dtype=np.int64)
    _emit_dense_rows(
        problem, rows_re,
        [(b.c_vre_re, v_idx[:, 0]), (b.c_vim_re, v_idx[:, 1]), (eye, s_idx[:, 0])],
        b.rhs_re, family)
    _emit_dense_rows(
        problem, rows_re,
        [(b.c_vre_im, v_idx[:, 0]), (b.c_vim_im, v_idx[:, 1]), (-eye, s_idx[:, 1])],
        b.rhs_im, family)


def slack_rows(problem: ConicProblem, v_idx: np.ndarray, n_nodes: int,
               family: str = "slack_voltage") -> None:
    """Pin the PCC voltage to the balanced reference for one hour."""
    vals = slack_values()
    for p, k in enumerate(slack_indices(n_nodes)):
        problem.add_equality([v_idx[k, 0]], [1.0], vals[p].real, family)
        problem.add_equality([v_idx[k, 1]], [1.0], vals[p].imag, family)


def pcc_power_rows(problem: ConicProblem, s_idx: np.ndarray, n_nodes: int,
                   s_pcc_idx: np.ndarray, p_pcc_idx: int,
                   family: str = "pcc_power") -> None:
    """Aggregate the three slack-phase powers and take the active part.

    ``s_pcc = s_a0 + s_b0 + s_c0`` and ``p_pcc = Re(s_pcc)``; positive
    means import from the upstream grid.
    """
    sl = slack_indices(n_nodes)
    for reim in (0, 1):
        idx = np.concatenate([s_idx[sl, reim], [s_pcc_idx[reim]]])
        coef = np.array([1.0, 1.0, 1.0, -1.0])
        problem.add_equality(idx, coef, 0.0, family)
    problem.add_equality([s_pcc_idx[0], p_pcc_idx], [1.0, -1.0], 0.0, family)


# ---------------------------------------------------------------------------
# stand-alone solvers (validation instruments, not dispatch engines)
# ---------------------------------------------------------------------------

def solve_linear_pf(aff: AffinePowerFlow, s_inj: np.ndarray,
                    n_nodes: int) -> np.ndarray:
    """Voltage solution of the affine model for fixed non-slack injections.

    The slack phases are pinned to the balanced reference; the PF rows
    at the slack node are dropped (the slack injection balances them).
    """
    b = pf_row_blocks(aff)
    m = aff.size
    sl = slack_indices(n_nodes)
    rest = np.setdiff1d(np.arange(m), sl)
    a = np.zeros((2 * m, 2 * m))
    rhs = np.zeros(2 * m)
    nr = rest.size
    a[:nr, :m] = b.c_vre_re[rest]
    a[:nr, m:] = b.c_vim_re[rest]
    rhs[:nr] = b.rhs_re[rest] - s_inj.real[rest]
    a[nr:2 * nr, :m] = b.c_vre_im[rest]
    a[nr:2 * nr, m:] = b.c_vim_im[rest]
    rhs[nr:2 * nr] = b.rhs_im[rest] + s_inj.imag[rest]
    vals = slack_values()
    for p, k in enumerate(sl):
        r0 = 2 * nr + 2 * p
        a[r0, k] = 1.0
        rhs[r0] = vals[p].real
        a[r0 + 1, m + k] = 1.0
        rhs[r0 + 1] = vals[p].imag
    sol = np.linalg.solve(a, rhs)
    return sol[:m] + 1j * sol[m:]


class PowerFlowDivergence(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            "nonlinear power flow did not converge after %d iterations "
            "(last update %.3e pu)" % (iterations, residual))


def nonlinear_pf_oracle(y3p: np.ndarray, s_inj: np.ndarray, n_nodes: int,
                        tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Exact unbalanced power flow by fixed-point (Z-bus) iteration.

    Solves ``s_k* = v_k* sum_m y_km v_m`` for the non-slack voltages
    with the slack phases pinned.  Returns the full complex 3n voltage
    vector.  Raises :class:`PowerFlowDivergence` when the update norm
    fails to drop below ``tol`` within ``max_iter`` sweeps.
    """
    m = y3p.shape[0]
    sl = slack_indices(n_nodes)
    rest = np.setdiff1d(np.arange(m), sl)
    v = flat_profile(n_nodes).astype(complex)
    y_rr = y3p[np.ix_(rest, rest)]
    y_rs = y3p[np.ix_(rest, sl)]
    rhs_slack = y_rs @ v[sl]
    lu = np.linalg.inv(y_rr)  # small systems; explicit inverse is fine
    update = np.inf
    for it in range(max_iter):
        i_r = np.conj(s_inj[rest] / v[rest])
        v_new = lu @ (i_r - rhs_slack)
        update = float(np.max(np.abs(v_new - v[rest])))
        v[rest] = v_new
        if update < tol:
            return v
    raise PowerFlowDivergence(update, max_iter)
