"""Isoparametric quadrilateral/hexahedral elements and their kernels.

Shape functions are tensor-product Lagrange polynomials of order 1 or 2 on
the reference element [-1, 1]^dim with lexicographic node ordering (first
axis fastest).  Volume and boundary integrals use tensor-product
Gauss-Legendre rules with order+1 points per direction, exact for the
bilinear/trilinear geometry maps used here.

The element kernels are vectorised over all elements of a material group:
arrays carry leading axes (n_elements, n_qp).
"""

from __future__ import annotations

import enum

import numpy as np

from . import plane_stress as ps
from .errors import InvertedElement, NonPositiveJ, UnsupportedRegime
from .materials import Material, eulerian_split_tangent
from .tensors import dyad_otimes, identity4_sym


class Regime(str, enum.Enum):
    FLATLAND = "flatland"
    PLANE_STRAIN = "plane_strain"
    PLANE_STRESS = "plane_stress"
    THREE_D = "three_d"


class Formulation(str, enum.Enum):
    ONE_FIELD = "one_field"
    THREE_FIELD = "three_field"


def spatial_dim(regime: Regime) -> int:
    return 3 if Regime(regime) is Regime.THREE_D else 2


def material_dim(regime: Regime) -> int:
    """Dimension of the constitutive state (flatland is truly 2D)."""
    return 2 if Regime(regime) is Regime.FLATLAND else 3


def stress_dimension(regime: Regime) -> int:
    """The ``d`` entering the von Mises deviator."""
    return 2 if Regime(regime) is Regime.FLATLAND else 3


# ---------------------------------------------------------------------------
# reference element: basis and quadrature
# ---------------------------------------------------------------------------

def _lagrange_1d(order: int, x: np.ndarray):
    """Values and derivatives of the 1D Lagrange basis on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    if order == 1:
        n = np.stack([0.5 * (1.0 - x), 0.5 * (1.0 + x)], axis=-1)
        d = np.stack([np.full_like(x, -0.5), np.full_like(x, 0.5)], axis=-1)
    elif order == 2:
        n = np.stack([0.5 * x * (x - 1.0), 1.0 - x**2, 0.5 * x * (x + 1.0)], axis=-1)
        d = np.stack([x - 0.5, -2.0 * x, x + 0.5], axis=-1)
    else:
        raise ValueError(f"unsupported polynomial order {order}")
    return n, d


def shape_functions(dim: int, order: int, pts: np.ndarray):
    """Tensor-product Lagrange basis at reference points.

    Returns (N, dN) shaped (npts, nn) and (npts, nn, dim) with nodes in
    lexicographic order, first reference axis fastest.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    npts = pts.shape[0]
    vals1 = []
    ders1 = []
    for ax in range(dim):
        n, d = _lagrange_1d(order, pts[:, ax])
        vals1.append(n)
        ders1.append(d)
    nn1 = order + 1
    nn = nn1**dim
    n_out = np.ones((npts, nn))
    d_out = np.ones((npts, nn, dim))
    idx = np.arange(nn)
    digits = [(idx // nn1**ax) % nn1 for ax in range(dim)]
    for ax in range(dim):
        n_out *= vals1[ax][:, digits[ax]]
        for ax2 in range(dim):
            fac = ders1[ax] if ax == ax2 else vals1[ax]
            d_out[:, :, ax2] *= fac[:, digits[ax]]
    return n_out, d_out


def gauss_rule(dim: int, npts_1d: int):
    """Tensor-product Gauss-Legendre rule on [-1, 1]^dim."""
    x, w = np.polynomial.legendre.leggauss(npts_1d)
    if dim == 1:
        return x[:, None], w
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    # first axis fastest: transpose the ij-indexing stack
    pts = np.stack([g.T.ravel() for g in grids], axis=-1)
    wts = np.ones(pts.shape[0])
    for g in wgrids:
        wts *= g.T.ravel()
    return pts, wts


def monomial_basis(dim: int, degree: int, pts: np.ndarray) -> np.ndarray:
    """Discontinuous total-degree monomial basis P_degree on the reference cell."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if degree == 0:
        return np.ones((pts.shape[0], 1))
    if degree == 1:
        return np.concatenate([np.ones((pts.shape[0], 1)), pts], axis=1)
    raise ValueError(f"unsupported mixed-field degree {degree}")


def n_monomials(dim: int, degree: int) -> int:
    return 1 if degree == 0 else 1 + dim


# faces are (axis, side) pairs; face k gives the plane ref[axis] = side
FACES_2D = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0)]
FACES_3D = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)]


def faces(dim: int):
    return FACES_2D if dim == 2 else FACES_3D


def face_local_nodes(dim: int, order: int, face_id: int) -> np.ndarray:
    """Lexicographic local node indices lying on a reference face."""
    axis, side = faces(dim)[face_id]
    nn1 = order + 1
    idx = np.arange(nn1**dim)
    digit = (idx // nn1**axis) % nn1
    want = 0 if side < 0 else order
    return idx[digit == want]


def embed_face_points(dim: int, face_id: int, fpts: np.ndarray) -> np.ndarray:
    """Map (dim-1)-dimensional face quadrature points into volume coordinates."""
    axis, side = faces(dim)[face_id]
    fpts = np.atleast_2d(fpts)
    out = np.zeros((fpts.shape[0], dim))
    free = [ax for ax in range(dim) if ax != axis]
    for k, ax in enumerate(free):
        out[:, ax] = fpts[:, k]
    out[:, axis] = side
    return out


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def geometry_factors(coords: np.ndarray, dn_ref: np.ndarray, weights: np.ndarray):
    """Isoparametric Jacobians for a batch of elements.

    coords (ne, nn, dim), dn_ref (nq, nn, dim) -> (detJw (ne, nq),
    dn_phys (ne, nq, nn, dim)).  Raises ValueError on non-positive map
    Jacobians (bad mesh).
    """
    jac = np.einsum("enc,qnd->eqcd", coords, dn_ref)
    detj = np.linalg.det(jac)
    if np.any(detj <= 0.0):
        raise ValueError("non-positive isoparametric Jacobian: invalid mesh")
    jinv = np.linalg.inv(jac)
    dn_phys = np.einsum("qnd,eqdc->eqnc", dn_ref, jinv)
    return detj * weights, dn_phys


def displacement_gradient(dn_phys: np.ndarray, u_e: np.ndarray) -> np.ndarray:
    """Material displacement gradient G_cd = du_c/dX_d per quadrature point."""
    return np.einsum("enc,eqnd->eqcd", u_e, dn_phys)


def det_f_minus_one(grad: np.ndarray) -> np.ndarray:
    """det(I + G) - 1 as a polynomial in G, avoiding the cancellation that
    det F - 1 suffers near the reference state."""
    if grad.shape[-1] == 2:
        return (
            grad[..., 0, 0]
            + grad[..., 1, 1]
            + grad[..., 0, 0] * grad[..., 1, 1]
            - grad[..., 0, 1] * grad[..., 1, 0]
        )
    tr = np.trace(grad, axis1=-2, axis2=-1)
    minors = (
        grad[..., 0, 0] * grad[..., 1, 1]
        - grad[..., 0, 1] * grad[..., 1, 0]
        + grad[..., 0, 0] * grad[..., 2, 2]
        - grad[..., 0, 2] * grad[..., 2, 0]
        + grad[..., 1, 1] * grad[..., 2, 2]
        - grad[..., 1, 2] * grad[..., 2, 1]
    )
    return tr + minors + np.linalg.det(grad)


def deformation_gradient(dn_phys: np.ndarray, u_e: np.ndarray) -> np.ndarray:
    """In-plane (or full 3D) deformation gradient at every quadrature point.

    Raises InvertedElement when det F <= 0 anywhere.
    """
    f = displacement_gradient(dn_phys, u_e) + np.eye(u_e.shape[-1])
    if np.any(np.linalg.det(f) <= 0.0):
        raise InvertedElement("det F <= 0 at a quadrature point")
    return f


def embed_f(fbar: np.ndarray, f33) -> np.ndarray:
    """3x3 deformation gradient diag(F_bar, F33)."""
    out = np.zeros(fbar.shape[:-2] + (3, 3))
    out[..., :2, :2] = fbar
    out[..., 2, 2] = f33
    return out


# ---------------------------------------------------------------------------
# one-field kernel
# ---------------------------------------------------------------------------

def _material_stiffness(bmat: np.ndarray, dmat: np.ndarray, detjw: np.ndarray) -> np.ndarray:
    """K_e = sum_q B^T (w D) B via batched matmul.

    bmat (ne, nq, dd, ndof), dmat (ne, nq, dd, dd) -> (ne, ndof, ndof).
    """
    wd = detjw[..., None, None] * dmat
    t = np.matmul(wd, bmat)  # (ne, nq, dd, ndof)
    ne, nq, dd, ndof = bmat.shape
    bflat = bmat.reshape(ne, nq * dd, ndof)
    tflat = t.reshape(ne, nq * dd, ndof)
    return np.matmul(bflat.transpose(0, 2, 1), tflat)


def _geometric_stiffness(dn: np.ndarray, s: np.ndarray, detjw: np.ndarray, ncomp: int):
    g = np.einsum("eq,eqnc,eqcd,eqmd->enm", detjw, dn, s, dn, optimize=True)
    kg = np.einsum("enm,ab->enamb", g, np.eye(ncomp))
    ne, nn = g.shape[0], g.shape[1]
    return kg.reshape(ne, nn * ncomp, nn * ncomp)


def onefield_stress_state(
    regime: Regime,
    model: Material,
    f: np.ndarray,
    dfm1: np.ndarray,
    c33_init: np.ndarray | None,
    settings: ps.CondensationSettings,
):
    """Per-quadrature-point stress and tangent for the one-field residual.

    ``f`` is the in-plane deformation gradient for the planar regimes and
    the full gradient in 3D; ``dfm1`` carries det F - 1 computed without
    cancellation.  Returns a dict with the in-plane stress and tangent
    driving the element matrices, the embedded (F, S) pair used by
    postprocessing, the updated C33 array, and inner-iteration statistics.
    """
    regime = Regime(regime)
    ne, nq = f.shape[:2]
    if regime in (Regime.FLATLAND, Regime.THREE_D):
        c = np.swapaxes(f, -1, -2) @ f
        # J of the constitutive state is det F in either dimension
        st = model.evaluate(c, jm1=dfm1)
        return dict(S=st.S, CC=st.CC, F_out=f, S_out=st.S, c33=None, inner_iters=0, abs_s33=0.0)
    cbar = np.swapaxes(f, -1, -2) @ f
    if regime is Regime.PLANE_STRAIN:
        st = model.evaluate(ps.embed_c(cbar, np.ones((ne, nq))), jm1=dfm1)
        return dict(
            S=st.S[..., :2, :2],
            CC=st.CC[..., :2, :2, :2, :2],
            F_out=embed_f(f, 1.0),
            S_out=st.S,
            c33=None,
            inner_iters=0,
            abs_s33=0.0,
        )
    # plane stress: nested Newton for C33 at every quadrature point
    init = np.ones((ne, nq)) if c33_init is None else c33_init
    flat_cbar = cbar.reshape(ne * nq, 2, 2)
    detcbar_m1 = (dfm1 * (2.0 + dfm1)).reshape(-1)  # det(Cbar) - 1 = (det F)^2 - 1
    try:
        c33, iters, resid = ps.solve_c33(
            model, flat_cbar, init=init.reshape(-1), settings=settings
        )
    except ps.NoConvergence as exc:  # pragma: no cover - annotated reraise
        raise ps.NoConvergence(f"{exc} (plane stress group of {ne} elements, {nq} qps)") from exc
    st = model.evaluate(
        ps.embed_c(flat_cbar, c33), jm1=ps._jm1_hint(c33, detcbar_m1)
    )
    ccbar = ps._condense_tangent_blocks(st.CC, model.mu)
    s_out = st.S.reshape(ne, nq, 3, 3)
    return dict(
        S=st.S[..., :2, :2].reshape(ne, nq, 2, 2),
        CC=ccbar.reshape(ne, nq, 2, 2, 2, 2),
        F_out=embed_f(f, np.sqrt(c33).reshape(ne, nq)),
        S_out=s_out,
        c33=c33.reshape(ne, nq),
        inner_iters=int(iters.max()) if iters.size else 0,
        abs_s33=float(np.abs(resid).max()) if resid.size else 0.0,
    )


def onefield_element_matrices(
    regime: Regime,
    model: Material,
    dn_phys: np.ndarray,
    detjw: np.ndarray,
    u_e: np.ndarray,
    c33_init: np.ndarray | None = None,
    settings: ps.CondensationSettings | None = None,
):
    """Internal residual and consistent stiffness of a one-field element batch.

    Returns (r_e, k_e, state) where r_e = -f_int (loads enter globally),
    k_e is the material + geometric tangent, and state carries the embedded
    stress fields plus plane stress bookkeeping.
    """
    settings = settings or ps.CondensationSettings()
    grad = displacement_gradient(dn_phys, u_e)
    f = grad + np.eye(u_e.shape[-1])
    if np.any(np.linalg.det(f) <= 0.0):
        raise InvertedElement("det F <= 0 at a quadrature point")
    state = onefield_stress_state(regime, model, f, det_f_minus_one(grad), c33_init, settings)
    s, cc = state["S"], state["CC"]
    ncomp = u_e.shape[-1]
    ne, nq, nn = dn_phys.shape[:3]
    d = s.shape[-1]

    p = f @ s
    fint = np.einsum("eq,eqab,eqnb->ena", detjw, p, dn_phys, optimize=True)
    r_e = -fint.reshape(ne, nn * ncomp)

    bmat = np.einsum("eqac,eqnd->eqcdna", f, dn_phys).reshape(ne, nq, d * d, nn * ncomp)
    dmat = cc.reshape(ne, nq, d * d, d * d)
    k_e = _material_stiffness(bmat, dmat, detjw)
    k_e += _geometric_stiffness(dn_phys, s, detjw, ncomp)
    state["detjw"] = detjw
    return r_e, k_e, state


# ---------------------------------------------------------------------------
# three-field kernel
# ---------------------------------------------------------------------------

def threefield_element_matrices(
    regime: Regime,
    model: Material,
    dn_phys: np.ndarray,
    detjw: np.ndarray,
    u_e: np.ndarray,
    p_e: np.ndarray,
    jt_e: np.ndarray,
    np_basis: np.ndarray,
    nj_basis: np.ndarray,
):
    """Residual blocks and stiffness of the mixed (u, p~, J~) element batch.

    The displacement block is evaluated in the spatial configuration with
    the mixed Kirchhoff stress tau = p~ J I + tau_iso and the tangent
    J c = J c_iso + p~ J [I x I - 2 I4_sym]; the scalar blocks couple the
    independent pressure and dilatation exactly as the variational form
    prescribes (K_pp = 0, K_uJ = 0).

    ``jt_e`` carries the dilatation dofs as deviations from 1 (the field is
    J~ = 1 + sum coeff * monomial): stored this way, the kappa-scaled
    dilatation residual keeps full relative accuracy in the nearly
    incompressible regime, where J~ - 1 ~ 1e-5 would otherwise be quantised
    at machine epsilon of 1.

    Returns (r_e, k_e, state) over the stacked element dof vector
    [u | p~ | J~].
    """
    regime = Regime(regime)
    if regime is Regime.PLANE_STRESS:
        raise UnsupportedRegime("plane stress uses the single-field formulation")
    ncomp = u_e.shape[-1]
    ne, nq, nn = dn_phys.shape[:3]
    nbp, nbj = np_basis.shape[1], nj_basis.shape[1]

    grad = displacement_gradient(dn_phys, u_e)
    fbar = grad + np.eye(ncomp)
    if np.any(np.linalg.det(fbar) <= 0.0):
        raise InvertedElement("det F <= 0 at a quadrature point")
    if regime is Regime.PLANE_STRAIN:
        f3 = embed_f(fbar, 1.0)
    else:
        f3 = fbar
    d3 = f3.shape[-1]
    jm1 = det_f_minus_one(grad)  # det F - 1, cancellation free; = det(f3) - 1
    j = 1.0 + jm1

    c_iso, _, tau_iso, _ = eulerian_split_tangent(model, f3.reshape(-1, d3, d3))
    c_iso = c_iso.reshape(ne, nq, d3, d3, d3, d3)
    tau_iso = tau_iso.reshape(ne, nq, d3, d3)

    pt = np.einsum("ep,qp->eq", p_e, np_basis)
    jtm1 = np.einsum("ej,qj->eq", jt_e, nj_basis)
    jt = 1.0 + jtm1
    if np.any(jt <= 0.0):
        raise NonPositiveJ("interpolated dilatation J~ <= 0 at a quadrature point")

    eye3 = np.eye(d3)
    tau = tau_iso + (pt * j)[..., None, None] * eye3
    jc = j[..., None, None, None, None] * c_iso + (pt * j)[..., None, None, None, None] * (
        dyad_otimes(eye3, eye3) - 2.0 * identity4_sym(d3)
    )

    finv = np.linalg.inv(fbar)
    h = np.einsum("eqnd,eqdc->eqnc", dn_phys, finv)  # spatial gradients, in-plane

    tau_ip = tau[..., :ncomp, :ncomp]
    jc_ip = jc[..., :ncomp, :ncomp, :ncomp, :ncomp]

    # displacement block
    ru = -np.einsum("eq,eqab,eqnb->ena", detjw, tau_ip, h, optimize=True).reshape(ne, nn * ncomp)
    bmat = np.einsum("ca,eqnd->eqcdna", np.eye(ncomp), h).reshape(ne, nq, ncomp * ncomp, nn * ncomp)
    kuu = _material_stiffness(bmat, jc_ip.reshape(ne, nq, ncomp**2, ncomp**2), detjw)
    kuu += _geometric_stiffness(h, tau_ip, detjw, ncomp)

    # scalar residuals and couplings
    pvol, dpvol = model.pressure(jt, delta=jtm1)
    rp = -np.einsum("eq,qp->ep", detjw * (jm1 - jtm1), np_basis)
    rj = -np.einsum("eq,qj->ej", detjw * (pvol - pt), nj_basis)

    kup = np.einsum("eq,eqna,qp->enap", detjw * j, h, np_basis, optimize=True).reshape(
        ne, nn * ncomp, nbp
    )
    kpj = -np.einsum("eq,qp,qj->epj", detjw, np_basis, nj_basis)
    kjj = np.einsum("eq,qi,qj->eij", detjw * dpvol, nj_basis, nj_basis)

    ndof = nn * ncomp + nbp + nbj
    k_e = np.zeros((ne, ndof, ndof))
    su = slice(0, nn * ncomp)
    sp = slice(nn * ncomp, nn * ncomp + nbp)
    sj = slice(nn * ncomp + nbp, ndof)
    k_e[:, su, su] = kuu
    k_e[:, su, sp] = kup
    k_e[:, sp, su] = np.swapaxes(kup, 1, 2)
    k_e[:, sp, sj] = kpj
    k_e[:, sj, sp] = np.swapaxes(kpj, 1, 2)
    k_e[:, sj, sj] = kjj

    r_e = np.concatenate([ru, rp, rj], axis=1)

    # Lagrangian stress consistent with the mixed pressure, for postprocessing
    f3inv = np.linalg.inv(f3)
    s_out = np.einsum("eqIi,eqij,eqJj->eqIJ", f3inv, tau, f3inv, optimize=True)
    state = dict(F_out=f3, S_out=s_out, detjw=detjw, c33=None, inner_iters=0, abs_s33=0.0)
    return r_e, k_e, state
