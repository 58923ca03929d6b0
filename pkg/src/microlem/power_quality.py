"""Power-quality constraints: harmonic power flow, THD, voltage limits.

Harmonic voltages obey the current-injection relation

    Y_h V_h = psi_h M (Y V),

where ``psi_h`` is the harmonic current spectrum (a fraction of the
fundamental current) and ``M`` masks the nodal current vector to the
PV-bearing (node, phase) entries.  The series-only harmonic admittance
``Y_h`` is a graph Laplacian and therefore singular on the full node
set; the PCC is treated as harmonically stiff (``V_h = 0`` there) and
the remaining grounded block is symmetric and invertible, which is what
both the constraint rows and the dense validation solve use.

THD at a node is the RMS harmonic stack over the fundamental magnitude.
The fundamental magnitude enters the cone through its linearization
``cos(theta) Re(v) + sin(theta) Im(v)`` around the nominal phasor of
the phase, which keeps the constraint second-order-cone representable.
Since that projection never exceeds the true magnitude, a solution of
the cone also satisfies the true THD bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProblem
from .linear_pf import PHASE_ANGLES, slack_indices
from .network import HOURS, ModelError, Network, build_admittance, expand_three_phase

DEFAULT_HARMONICS = (3, 5, 7, 9, 11, 13)


@dataclass
class HarmonicSpectrum:
    """Injection ratio per harmonic order at PV-bearing nodes.

    Ratios are fractions of the fundamental current (a spectrum quoted
    in percent is divided by 100 on load).
    """

    harmonics: tuple[int, ...] = DEFAULT_HARMONICS
    psi: np.ndarray = field(default_factory=lambda: np.zeros(len(DEFAULT_HARMONICS)))

    def __post_init__(self):
        self.harmonics = tuple(int(h) for h in self.harmonics)
        self.psi = np.asarray(self.psi, dtype=float).ravel()
        if self.psi.shape != (len(self.harmonics),):
            raise ModelError("spectrum needs one ratio per harmonic order")
        if np.any(self.psi < 0):
            raise ModelError("spectrum ratios must be nonnegative")
        if np.any(self.psi >= 0.05):
            raise ModelError("spectrum ratios above 5%% of fundamental are "
                             "outside the model's validity range")

    def ratio(self, h: int) -> float:
        return float(self.psi[self.harmonics.index(h)])


@dataclass
class PqLimits:
    thd_max: float = 0.08
    delta: float = 0.05
    v_nom: float = 1.0

    def __post_init__(self):
        if not 0 < self.thd_max < 1:
            raise ModelError("thd_max must lie in (0, 1)")
        if not 0 < self.delta < 0.1:
            raise ModelError("voltage tolerance must lie in (0, 0.1)")


def build_harmonic_admittance(network: Network, h: int,
                              skin_effect: bool = False) -> np.ndarray:
    """Three-phase harmonic admittance (3n x 3n) with z_h = r + j h x.

    The full matrix keeps the Laplacian structure of the fundamental
    assembly; invertibility, which the harmonic solve relies on, holds
    for the slack-grounded block and is verified there.
    """
    y = build_admittance(network, harmonic=h, skin_effect=skin_effect)
    y3 = expand_three_phase(y)
    check_grounded_invertible(y3, network.n_nodes, h)
    return y3


def grounded(y3: np.ndarray, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Slack-grounded submatrix and the surviving flat indices."""
    keep = np.setdiff1d(np.arange(3 * n_nodes), slack_indices(n_nodes))
    return y3[np.ix_(keep, keep)], keep


def check_grounded_invertible(y3: np.ndarray, n_nodes: int, h: int) -> float:
    yg, _ = grounded(y3, n_nodes)
    cond = float(np.linalg.cond(yg))
    if not np.isfinite(cond) or cond > 1e12:
        raise ModelError("harmonic admittance at order %d is numerically "
                         "singular after grounding (cond %.3e)" % (h, cond))
    return cond


def pv_phase_mask(n_nodes: int, pv_flat_indices: np.ndarray) -> np.ndarray:
    """1.0 at (node, phase) entries that carry a PV system, else 0."""
    mask = np.zeros(3 * n_nodes)
    mask[np.asarray(pv_flat_indices, dtype=int)] = 1.0
    return mask


def hpf_rows(problem: ConicProblem, y_h: np.ndarray, y3p: np.ndarray,
             psi_h: float, mask: np.ndarray,
             v_idx: np.ndarray, vh_idx: np.ndarray, n_nodes: int,
             family: str = "harmonic_flow") -> None:
    """Emit the grounded harmonic-balance rows plus the stiff-PCC pins.

    Complex rows ``Y_h V_h - psi_h M Y V = 0`` are split into (Re, Im)
    pairs at the non-slack entries; the slack harmonic voltage is pinned
    to zero.  Index arrays have shape (3n, 2).
    """
    sl = slack_indices(n_nodes)
    keep = np.setdiff1d(np.arange(3 * n_nodes), sl)
    lhs = y_h[keep, :]
    # mask scales the current vector Y V row-wise: rows of diag(psi*mask) Y
    rhs_mat = (psi_h * mask[keep])[:, None] * y3p[keep, :] if psi_h else None

    def emit(c_re_vh, c_im_vh, c_re_v, c_im_v):
        rows, cols, vals = [], [], []
        panels = [(c_re_vh, vh_idx[:, 0]), (c_im_vh, vh_idx[:, 1])]
        if c_re_v is not None:
            panels += [(c_re_v, v_idx[:, 0]), (c_im_v, v_idx[:, 1])]
        for mat, col_idx in panels:
            nz = np.nonzero(mat)
            rows.append(nz[0].astype(np.int64))
            cols.append(col_idx[nz[1]])
            vals.append(mat[nz])
        problem.add_equality_block(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            np.zeros(keep.size), family)

    if rhs_mat is None:
        emit(lhs.real, -lhs.imag, None, None)
        emit(lhs.imag, lhs.real, None, None)
    else:
        emit(lhs.real, -lhs.imag, -rhs_mat.real, rhs_mat.imag)
        emit(lhs.imag, lhs.real, -rhs_mat.imag, -rhs_mat.real)

    for k in sl:
        problem.add_equality([vh_idx[k, 0]], [1.0], 0.0, family + "_slack")
        problem.add_equality([vh_idx[k, 1]], [1.0], 0.0, family + "_slack")


def hpf_direct_solve(y_h: np.ndarray, y3p: np.ndarray, psi_h: float,
                     mask: np.ndarray, v: np.ndarray,
                     n_nodes: int) -> np.ndarray:
    """Dense reference solve ``V_h = psi_h Y_h^-1 M Y V`` (slack pinned 0)."""
    yg, keep = grounded(y_h, n_nodes)
    rhs = (psi_h * mask * (y3p @ v))[keep]
    vh = np.zeros(3 * n_nodes, dtype=complex)
    vh[keep] = np.linalg.solve(yg, rhs)
    return vh


def linearized_magnitude(theta: float) -> tuple[float, float]:
    """Coefficients (on Re v, Im v) of the magnitude linearized at 1<theta."""
    return float(np.cos(theta)), float(np.sin(theta))


def magnitude_linear_value(v: complex, theta: float) -> float:
    c, s = linearized_magnitude(theta)
    return c * v.real + s * v.imag


def thd_cone_rows(problem: ConicProblem, vh_idx_all: np.ndarray,
                  v_idx: np.ndarray, thd_max: float, n_nodes: int,
                  family: str = "thd_cone") -> None:
    """One (2H+1)-dimensional cone per (node, phase) for one hour.

    ``vh_idx_all`` has shape (H, 3n, 2); the head is the linearized
    fundamental magnitude scaled by ``thd_max``.
    """
    nh = vh_idx_all.shape[0]
    m = 3 * n_nodes
    dim = 1 + 2 * nh
    theta = np.repeat(PHASE_ANGLES, n_nodes)
    head_rows = np.arange(m, dtype=np.int64) * dim
    rows = [np.repeat(head_rows, 2)]
    cols = [v_idx.ravel()]
    vals = [(thd_max * np.stack([np.cos(theta), np.sin(theta)], axis=1)).ravel()]
    for hh in range(nh):
        for reim in (0, 1):
            rows.append(head_rows + 1 + 2 * hh + reim)
            cols.append(vh_idx_all[hh, :, reim])
            vals.append(np.ones(m))
    problem.add_cone_block(
        family, dim, m,
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
        np.zeros(m * dim))


def voltage_limit_rows(problem: ConicProblem, v_idx: np.ndarray,
                       limits: PqLimits, n_nodes: int,
                       family: str = "voltage_limit") -> None:
    """Cone ``|v - v_nom| <= delta |v_nom|`` per (node, phase), one hour."""
    m = 3 * n_nodes
    theta = np.repeat(PHASE_ANGLES, n_nodes)
    nom = limits.v_nom * np.exp(1j * theta)
    dim = 3
    head_rows = np.arange(m, dtype=np.int64) * dim
    consts = np.zeros(m * dim)
    consts[::dim] = limits.delta * limits.v_nom
    consts[1::dim] = -nom.real
    consts[2::dim] = -nom.imag
    rows = np.stack([head_rows + 1, head_rows + 2], axis=1).ravel()
    cols = v_idx.ravel()
    problem.add_cone_block(family, dim, m, rows, cols, np.ones(cols.size), consts)


def thd_percent(vh_all: np.ndarray, v: np.ndarray) -> np.ndarray:
    """True (non-linearized) THD in percent; NaN where |v| is zero.

    ``vh_all`` has shape (H, 3n) of complex harmonic voltages.
    """
    num = np.sqrt(np.sum(np.abs(vh_all) ** 2, axis=0))
    den = np.abs(np.asarray(v))
    out = np.full(den.shape, np.nan)
    ok = den > 0
    out[ok] = 100.0 * num[ok] / den[ok]
    return out
