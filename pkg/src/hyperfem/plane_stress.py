"""Quadrature-point plane stress condensation.

The out-of-plane stretch C33 is eliminated by solving S33(C_bar, C33) = 0
with a Newton iteration nested at each quadrature point.  The production
path is fully generic: it works with any 3D hyperelastic model by reading
S33 and the relevant blocks of the full Lagrangian tangent.  The condensed
in-plane tangent is

    CC_bar[abcd] = CC[abcd] - CC[ab33] CC[33cd] / CC[3333]

which is the consistent linearisation of the condensed stress, i.e. the
exact derivative of S_bar along the constraint manifold S33 = 0.  Closed
forms for the two neo-Hookean models are provided as independent
cross-check paths.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NonPhysicalRoot, SingularCondensation
from .materials import Material, MaterialParams
from .tensors import dyad_odot, dyad_otimes, identity2

MAX_STEP_HALVINGS = 20


class InitStrategy(str, enum.Enum):
    PREVIOUS_CONVERGED = "previous_converged"
    UNITY = "unity"


@dataclass(frozen=True)
class CondensationSettings:
    """Controls of the nested Newton solve.

    ``abs_tol`` is an absolute tolerance on |S33| in MPa; when None it
    defaults to 1e-12 * mu of the material being condensed, two orders
    below the guaranteed 1e-10 * mu bound so the condensation error stays
    invisible in the outer Newton residuals.  ``polish`` takes one extra
    Newton step after convergence (kept only when it does not worsen the
    residual): the quadratic overshoot then parks |S33| at its rounding
    floor instead of anywhere inside the tolerance band, removing a bias
    that would otherwise contaminate the outer residual.
    """

    abs_tol: float | None = None
    max_iters: int = 50
    init_strategy: InitStrategy = InitStrategy.PREVIOUS_CONVERGED
    polish: bool = True

    def __post_init__(self):
        if self.abs_tol is not None and self.abs_tol <= 0.0:
            raise ValueError("abs_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def tolerance(self, mu: float) -> float:
        return self.abs_tol if self.abs_tol is not None else 1e-12 * mu


@dataclass
class CondensedState:
    """Converged per-point condensation record (arrays broadcast over batch)."""

    Cbar: np.ndarray
    C33: np.ndarray
    Sbar: np.ndarray
    CCbar: np.ndarray
    inner_iters: np.ndarray
    residual_S33: np.ndarray


def embed_c(cbar: np.ndarray, c33: np.ndarray) -> np.ndarray:
    """Assemble the block-diagonal 3x3 tensor C = diag(C_bar, C33)."""
    cbar = np.asarray(cbar, dtype=float)
    c33 = np.asarray(c33, dtype=float)
    batch = np.broadcast_shapes(cbar.shape[:-2], c33.shape)
    c = np.zeros(batch + (3, 3))
    c[..., :2, :2] = cbar
    c[..., 2, 2] = c33
    return c


def _jm1_hint(c33, detcbar_m1):
    """J - 1 for C = diag(C_bar, C33) from det(C_bar) - 1.

    Near the reference state, J^2 - 1 = a + b + a b (a = C33 - 1,
    b = det(C_bar) - 1) is cancellation free and keeps the kappa-scaled
    stress terms at full relative accuracy.  Far from the reference the
    same sum cancels O(|b|) terms, which quantises S33 into plateaus wider
    than one ulp of C33 and can stall the nested Newton; there the plain
    square-root form is both smooth in C33 and accurate enough (the
    kappa * eps noise is negligible against the large-strain stresses).
    """
    if detcbar_m1 is None:
        return None
    a = np.asarray(c33, dtype=float) - 1.0
    b = np.asarray(detcbar_m1, dtype=float)
    djsq_delta = a + b + a * b
    delta = djsq_delta / (1.0 + np.sqrt(1.0 + djsq_delta))
    naive = np.sqrt((1.0 + a) * (1.0 + b)) - 1.0
    small = (np.abs(a) < 0.25) & (np.abs(b) < 0.25)
    return np.where(small, delta, naive)


def solve_c33(
    model: Material,
    cbar: np.ndarray,
    init: np.ndarray | float = 1.0,
    settings: CondensationSettings | None = None,
    residual_trace: list | None = None,
):
    """Newton solve of S33(C_bar, C33) = 0 for the out-of-plane stretch.

    Vectorised over any batch of in-plane tensors ``cbar``.  The update is
    dC33 = -S33 / (dS33/dC33) with dS33/dC33 = CC_3333 / 2 from the full 3D
    tangent; steps that would drive C33 <= 0 are halved (up to 20 times)
    before failing with NonPhysicalRoot.  Returns (C33, iters, residual).

    The iteration evaluates S33 through the plain determinant path, whose
    quantisation in C33 is a single ulp; delta-accurate stress evaluation
    (see ``_jm1_hint``) is for the converged state only, where C33 is fixed.
    ``residual_trace``, when a list, collects the active |S33| values per
    iteration (used to observe the quadratic convergence of the inner loop).
    """
    settings = settings or CondensationSettings()
    tol = settings.tolerance(model.mu)
    cbar = np.asarray(cbar, dtype=float)
    scalar_input = cbar.ndim == 2
    if scalar_input:
        cbar = cbar[None]
    batch = cbar.shape[:-2]
    c33 = np.broadcast_to(np.asarray(init, dtype=float), batch).astype(float).copy()
    if np.any(c33 <= 0.0):
        raise NonPhysicalRoot("initial C33 must be positive")

    def s33_slope(c33_vals, sel=None):
        cb = cbar if sel is None else cbar[sel]
        st = model.evaluate(embed_c(cb, c33_vals))
        return st.S[..., 2, 2], 0.5 * st.CC[..., 2, 2, 2, 2]

    # One ulp of C33 moves S33 by about eps * |slope| * |C33|, so |S33| can
    # never fall below the quantisation of the root itself.  Accept a point
    # once it is within a few ulps of the best representable root, or once
    # the safeguarded iteration provably cannot improve it further while it
    # already satisfies the guaranteed 1e-10 * mu bound.
    eps = np.finfo(float).eps
    stall_cap = max(tol, 1e-10 * model.mu)

    def point_tol(slope_vals, c33_vals):
        return np.maximum(tol, 4.0 * eps * np.abs(slope_vals) * np.abs(c33_vals))

    iters = np.zeros(batch, dtype=int)
    stalled = np.zeros(batch, dtype=bool)
    r, slope = s33_slope(c33)
    if residual_trace is not None:
        residual_trace.append(np.abs(r).copy())
    for _ in range(settings.max_iters):
        absr = np.abs(r)
        active = (absr > point_tol(slope, c33)) & ~stalled
        if not active.any():
            break
        step = np.where(active, -r / slope, 0.0)
        # positivity safeguard
        trial = c33 + step
        halvings = 0
        while np.any(trial[active] <= 0.0):
            if halvings >= MAX_STEP_HALVINGS:
                raise NonPhysicalRoot("C33 driven to <= 0 despite step halving")
            bad = active & (trial <= 0.0)
            step[bad] *= 0.5
            trial = c33 + step
            halvings += 1
        r_new, slope_new = s33_slope(trial)
        # monotone safeguard: retreat half-way while |S33| worsens
        for _h in range(MAX_STEP_HALVINGS):
            worse = active & (np.abs(r_new) > absr)
            if not worse.any():
                break
            step[worse] *= 0.5
            trial = c33 + step
            r_sub, slope_sub = s33_slope(trial[worse], sel=worse)
            r_new[worse] = r_sub
            slope_new[worse] = slope_sub
        # stagnation at the arithmetic limit: no representable improvement
        no_progress = active & (np.abs(r_new) >= absr)
        stalled |= no_progress & (absr <= stall_cap)
        take = active & ~no_progress
        c33 = np.where(take, trial, c33)
        r = np.where(take, r_new, r)
        slope = np.where(take, slope_new, slope)
        iters[take] += 1
        if residual_trace is not None:
            residual_trace.append(np.abs(r).copy())
    residual = r
    bad = (np.abs(residual) > point_tol(slope, c33)) & ~stalled
    if np.any(bad):
        raise NoConvergence(
            f"plane stress condensation: {int(np.count_nonzero(bad))} point(s) not "
            f"converged after {settings.max_iters} iterations "
            f"(worst |S33| = {float(np.abs(residual).max()):.3e})"
        )
    if settings.polish:
        trial = c33 - r / slope
        ok = trial > 0.0
        r_new = np.full_like(r, np.inf)
        if np.any(ok):
            r_sub, _ = s33_slope(trial[ok], sel=ok)
            r_new[ok] = r_sub
        better = ok & (np.abs(r_new) <= np.abs(r))
        c33 = np.where(better, trial, c33)
        residual = np.where(better, r_new, r)
    if scalar_input:
        return float(c33[0]), int(iters[0]), float(residual[0])
    return c33, iters, residual


def condensed_stress(model: Material, cbar: np.ndarray, c33, detcbar_m1=None) -> np.ndarray:
    """In-plane stress S_bar: the 2x2 block of the 3D stress at C = diag(C_bar, C33)."""
    st = model.evaluate(
        embed_c(cbar, c33), tangent=False, jm1=_jm1_hint(c33, detcbar_m1)
    )
    return st.S[..., :2, :2]


def condensed_tangent(model: Material, cbar: np.ndarray, c33, detcbar_m1=None) -> np.ndarray:
    """Consistent condensed in-plane tangent CC_bar (2x2x2x2).

    Assembled from blocks of the full 3D tangent via the implicit
    derivative of the converged C33.  Raises SingularCondensation when the
    pivot |dS33/dC33| falls below 1e-12 * mu.
    """
    st = model.evaluate(embed_c(cbar, c33), jm1=_jm1_hint(c33, detcbar_m1))
    return _condense_tangent_blocks(st.CC, model.mu)


def _condense_tangent_blocks(cc: np.ndarray, mu: float) -> np.ndarray:
    pivot = cc[..., 2, 2, 2, 2]
    if np.any(np.abs(0.5 * pivot) < 1e-12 * mu):
        raise SingularCondensation("dS33/dC33 is numerically zero")
    inplane = cc[..., :2, :2, :2, :2]
    mixed = cc[..., :2, :2, 2, 2]
    row33 = cc[..., 2, 2, :2, :2]
    corr = np.einsum("...ab,...cd->...abcd", mixed, row33) / pivot[..., None, None, None, None]
    return inplane - corr


def condense(
    model: Material,
    cbar: np.ndarray,
    init: np.ndarray | float = 1.0,
    settings: CondensationSettings | None = None,
    detcbar_m1: np.ndarray | None = None,
) -> CondensedState:
    """Solve the condensation and package stress + tangent in one pass."""
    c33, iters, residual = solve_c33(model, cbar, init=init, settings=settings)
    st = model.evaluate(embed_c(cbar, c33), jm1=_jm1_hint(c33, detcbar_m1))
    return CondensedState(
        Cbar=np.asarray(cbar, dtype=float),
        C33=c33,
        Sbar=st.S[..., :2, :2],
        CCbar=_condense_tangent_blocks(st.CC, model.mu),
        inner_iters=iters,
        residual_S33=residual,
    )


def closed_form_decoupled(cbar: np.ndarray, c33, params: MaterialParams):
    """Closed-form condensed stress/tangent for the decoupled neo-Hookean model
    with the volumetric law G = (J^2 - 1 - 2 ln J)/4.

    Valid only on converged states (S33 = 0); serves as an independent
    cross-check of the generic path.  Returns (Sbar, CCbar, gamma, beta)
    where gamma is the C^-1 stress coefficient and beta = dS33/dC_bar at
    fixed C33.
    """
    mu, kappa = params.mu, params.kappa
    cbar = np.asarray(cbar, dtype=float)
    c33 = np.asarray(c33, dtype=float)
    jbar2 = np.linalg.det(cbar)
    j2 = c33 * jbar2
    j = np.sqrt(j2)
    i1 = np.trace(cbar, axis1=-2, axis2=-1) + c33
    a = j ** (-2.0 / 3.0)
    cbinv = np.linalg.inv(cbar)
    eye = np.broadcast_to(identity2(2), cbar.shape)
    gamma = 0.5 * kappa * (j2 - 1.0) - mu / 3.0 * i1 * a

    b2 = lambda x: x[..., None, None]
    b4 = lambda x: x[..., None, None, None, None]

    # On the constraint manifold:  S_bar = mu J^(-2/3) [I - C33 Cb^-1].
    paren = eye - b2(c33) * cbinv
    sbar = b2(mu * a) * paren

    # dJ^(-2/3)/dCb|C33 = -(1/3) J^(-2/3) Cb^-1,  dJ^(-2/3)/dC33 = -(1/3) J^(-2/3)/C33.
    ds_dcb = b4(mu * a) * (
        b4(c33) * dyad_odot(cbinv, cbinv) - dyad_otimes(paren, cbinv) / 3.0
    )
    ds_dc33 = -b2(mu * a) * (paren / b2(3.0 * c33) + cbinv)

    # beta = dS33/dCb|C33 with S33 = mu J^(-2/3) + gamma / C33 (unsubstituted).
    dgamma_dcb = (
        b2(0.5 * kappa * c33 * jbar2) * cbinv
        - mu / 3.0 * (b2(a) * eye - b2(i1 * a / 3.0) * cbinv)
    )
    beta = b2(-mu / 3.0 * a) * cbinv + dgamma_dcb / b2(c33)

    dgamma_dc33 = 0.5 * kappa * jbar2 - mu / 3.0 * a * (1.0 - i1 / (3.0 * c33))
    ds33_dc33 = -mu / 3.0 * a / c33 + dgamma_dc33 / c33 - gamma / c33**2
    dc33_dcb = -beta / b2(ds33_dc33)

    ccbar = 2.0 * (ds_dcb + np.einsum("...ab,...cd->...abcd", ds_dc33, dc33_dcb))
    return sbar, ccbar, gamma, beta


def closed_form_alternative(cbar: np.ndarray, c33, params: MaterialParams):
    """Closed-form condensed stress/tangent for the alternative neo-Hookean
    model psi = mu/2 [i1 - 3 - 2 ln J] + kappa/2 [J - 1]^2.

    Valid only on converged states (S33 = 0).  Returns (Sbar, CCbar, alpha).
    """
    mu, kappa = params.mu, params.kappa
    cbar = np.asarray(cbar, dtype=float)
    c33 = np.asarray(c33, dtype=float)
    jbar2 = np.linalg.det(cbar)
    j = np.sqrt(c33 * jbar2)
    cbinv = np.linalg.inv(cbar)
    eye = np.broadcast_to(identity2(2), cbar.shape)
    alpha = kappa * j * (j - 1.0)

    b2 = lambda x: x[..., None, None]

    sbar = mu * (eye - b2(c33) * cbinv)
    ds_dcb = b2(mu * c33) * dyad_odot(cbinv, cbinv)
    ds_dc33 = -mu * cbinv

    dalpha_dcb = b2(kappa * c33 * jbar2 * (1.0 - 0.5 / j)) * cbinv
    dalpha_dc33 = kappa * jbar2 * (1.0 - 0.5 / j)
    ds33_dc33 = dalpha_dc33 / c33 - (alpha - mu) / c33**2
    dc33_dcb = -dalpha_dcb / b2(c33 * ds33_dc33)

    ccbar = 2.0 * (ds_dcb + np.einsum("...ab,...cd->...abcd", ds_dc33, dc33_dcb))
    return sbar, ccbar, alpha
