"""Unit tests for shape functions, quadrature, and element kernels."""

import numpy as np
import pytest

from hyperfem import elements as el
from hyperfem import materials as mat
from hyperfem.errors import InvertedElement, UnsupportedRegime
from hyperfem.plane_stress import CondensationSettings


def single_element_geometry(dim, order, coords=None):
    """Geometry factors for one element with given (or reference) coordinates."""
    pts, w = el.gauss_rule(dim, order + 1)
    nvals, dn_ref = el.shape_functions(dim, order, pts)
    if coords is None:
        grid = np.linspace(0.0, 1.0, order + 1)
        axes = np.meshgrid(*([grid] * dim), indexing="ij")
        coords = np.stack([a.T.ravel() if dim == 2 else a.transpose(2, 1, 0).ravel() for a in axes], axis=-1)
    coords = coords[None]  # one-element batch
    detjw, dn_phys = el.geometry_factors(coords, dn_ref, w)
    return coords, detjw, dn_phys


class TestShapeFunctions:
    def test_q1_center(self):
        n, _ = el.shape_functions(2, 1, np.array([[0.0, 0.0]]))
        assert np.allclose(n, 0.25)

    @pytest.mark.parametrize("dim,order", [(2, 1), (2, 2), (3, 1), (3, 2)])
    def test_kronecker_delta_at_nodes(self, dim, order):
        nn1 = order + 1
        grid = np.linspace(-1.0, 1.0, nn1)
        idx = np.arange(nn1**dim)
        pts = np.stack([grid[(idx // nn1**ax) % nn1] for ax in range(dim)], axis=-1)
        n, _ = el.shape_functions(dim, order, pts)
        assert np.allclose(n, np.eye(nn1**dim), atol=1e-14)

    @pytest.mark.parametrize("dim,order", [(2, 1), (2, 2), (3, 1), (3, 2)])
    def test_partition_of_unity(self, dim, order):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (20, dim))
        n, dn = el.shape_functions(dim, order, pts)
        assert np.abs(n.sum(axis=1) - 1.0).max() < 1e-14
        assert np.abs(dn.sum(axis=1)).max() < 1e-13

    @pytest.mark.parametrize("dim,order", [(2, 1), (2, 2), (3, 2)])
    def test_gradients_vs_fd(self, dim, order):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.9, 0.9, (5, dim))
        _, dn = el.shape_functions(dim, order, pts)
        h = 1e-6
        for ax in range(dim):
            shift = np.zeros(dim)
            shift[ax] = h
            np_, _ = el.shape_functions(dim, order, pts + shift)
            nm_, _ = el.shape_functions(dim, order, pts - shift)
            assert np.abs((np_ - nm_) / (2 * h) - dn[:, :, ax]).max() < 1e-8


class TestQuadrature:
    @pytest.mark.parametrize("dim,npts", [(2, 2), (2, 3), (3, 2), (3, 3)])
    def test_reference_measure(self, dim, npts):
        _, w = el.gauss_rule(dim, npts)
        assert w.sum() == pytest.approx(2.0**dim, rel=1e-14)

    def test_polynomial_exactness(self):
        pts, w = el.gauss_rule(1, 3)
        # degree-5 polynomial integrated exactly by 3-point Gauss
        val = np.sum(w * (pts[:, 0] ** 5 + pts[:, 0] ** 4))
        assert val == pytest.approx(2.0 / 5.0, rel=1e-14)


class TestDeformationGradient:
    @pytest.mark.parametrize("order", [1, 2])
    def test_zero_displacement(self, order):
        _, _, dn_phys = single_element_geometry(2, order)
        nn = dn_phys.shape[2]
        f = el.deformation_gradient(dn_phys, np.zeros((1, nn, 2)))
        assert np.abs(f - np.eye(2)).max() < 1e-14

    @pytest.mark.parametrize("order", [1, 2])
    def test_affine_stretch_patchwise(self, order):
        coords, _, dn_phys = single_element_geometry(2, order)
        u = np.zeros_like(coords)
        u[..., 0] = 0.2 * coords[..., 0]
        f = el.deformation_gradient(dn_phys, u)
        assert np.abs(f - np.diag([1.2, 1.0])).max() < 1e-13

    def test_inversion_detected(self):
        coords, _, dn_phys = single_element_geometry(2, 1)
        u = np.zeros_like(coords)
        u[..., 0] = -1.5 * coords[..., 0]
        with pytest.raises(InvertedElement):
            el.deformation_gradient(dn_phys, u)


def fd_element_jacobian(residual_fn, dofs, h=1e-7):
    """Central-difference Jacobian of -R with respect to the element dofs."""
    n = dofs.size
    k = np.zeros((n, n))
    for j in range(n):
        dp = dofs.copy()
        dm = dofs.copy()
        dp[j] += h
        dm[j] -= h
        k[:, j] = -(residual_fn(dp) - residual_fn(dm)) / (2 * h)
    return k


MODELS_BY_REGIME = {
    el.Regime.FLATLAND: lambda: mat.make_material("flatland_neo_hookean", mu=2.0, nu=0.3),
    el.Regime.PLANE_STRAIN: lambda: mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.3),
    el.Regime.PLANE_STRESS: lambda: mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.3),
    el.Regime.THREE_D: lambda: mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.3),
}


class TestOneFieldKernel:
    @pytest.mark.parametrize("regime", list(el.Regime), ids=lambda r: r.value)
    @pytest.mark.parametrize("order", [1, 2])
    def test_zero_state(self, regime, order):
        dim = el.spatial_dim(regime)
        coords, detjw, dn_phys = single_element_geometry(dim, order)
        model = MODELS_BY_REGIME[regime]()
        r, k, _ = el.onefield_element_matrices(regime, model, dn_phys, detjw, np.zeros_like(coords))
        assert np.abs(r).max() < 1e-13
        assert np.abs(k - np.swapaxes(k, 1, 2)).max() < 1e-10 * np.abs(k).max()

    @pytest.mark.parametrize("regime", list(el.Regime), ids=lambda r: r.value)
    def test_stiffness_matches_fd_of_residual(self, regime):
        dim = el.spatial_dim(regime)
        order = 2 if dim == 2 else 1
        coords, detjw, dn_phys = single_element_geometry(dim, order)
        model = MODELS_BY_REGIME[regime]()
        rng = np.random.default_rng(17)
        nn = dn_phys.shape[2]
        u = 0.05 * rng.standard_normal((1, nn, dim))
        settings = CondensationSettings(abs_tol=1e-13)

        def resid(dofs):
            r, _, _ = el.onefield_element_matrices(
                regime, model, dn_phys, detjw, dofs.reshape(1, nn, dim), settings=settings
            )
            return r[0]

        r, k, _ = el.onefield_element_matrices(
            regime, model, dn_phys, detjw, u, settings=settings
        )
        k_fd = fd_element_jacobian(resid, u.ravel())
        scale = np.abs(k[0]).max()
        assert np.abs(k[0] - k_fd).max() < 1e-5 * scale, f"{regime}: tangent mismatch"

    def test_homogeneous_stretch_force_bookkeeping(self):
        # Uniaxial stretch of the unit flatland square: internal force on the
        # x = 1 edge equals P11 * edge length, integrated by hand.
        model = mat.make_material("flatland_neo_hookean", mu=2.0, nu=0.3)
        coords, detjw, dn_phys = single_element_geometry(2, 1)
        lam_ = 1.2
        u = np.zeros_like(coords)
        u[..., 0] = (lam_ - 1.0) * coords[..., 0]
        r, _, _ = el.onefield_element_matrices(el.Regime.FLATLAND, model, dn_phys, detjw, u)
        f = el.deformation_gradient(dn_phys, u)[0, 0]
        st = model.evaluate(f.T @ f, tangent=False)
        p11 = (f @ st.S)[0, 0]
        # nodes 1 and 3 are the x = 1 edge; each takes half the edge force
        fint = -r[0].reshape(4, 2)
        assert fint[1, 0] == pytest.approx(p11 / 2, rel=1e-12)
        assert fint[3, 0] == pytest.approx(p11 / 2, rel=1e-12)
        assert fint[1, 0] + fint[3, 0] == pytest.approx(p11 * 1.0, rel=1e-12)


class TestThreeFieldKernel:
    @pytest.mark.parametrize(
        "regime", [el.Regime.FLATLAND, el.Regime.PLANE_STRAIN, el.Regime.THREE_D],
        ids=lambda r: r.value,
    )
    def test_zero_state_residuals_and_coupling(self, regime):
        dim = el.spatial_dim(regime)
        order = 2
        coords, detjw, dn_phys = single_element_geometry(dim, order)
        model = (
            mat.make_material("flatland_neo_hookean", mu=2.0, nu=0.3)
            if regime is el.Regime.FLATLAND
            else mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.3)
        )
        pts, _ = el.gauss_rule(dim, order + 1)
        np_b = el.monomial_basis(dim, order - 1, pts)
        nn = dn_phys.shape[2]
        nb = np_b.shape[1]
        p_e = np.zeros((1, nb))
        j_e = np.zeros((1, nb))  # dilatation dofs are J~ - 1
        r, k, _ = el.threefield_element_matrices(
            regime, model, dn_phys, detjw, np.zeros((1, nn, dim)), p_e, j_e, np_b, np_b
        )
        assert np.abs(r).max() < 1e-12
        # K_pJ must be the negative mass-type coupling
        su = nn * dim
        kpj = k[0, su : su + nb, su + nb : su + 2 * nb]
        mass = np.einsum("q,qi,qj->ij", detjw[0], np_b, np_b)
        assert np.allclose(kpj, -mass, rtol=1e-12)
        # printed zero blocks
        assert np.abs(k[0, su : su + nb, su : su + nb]).max() == 0.0  # K_pp
        assert np.abs(k[0, :su, su + nb :]).max() == 0.0  # K_uJ

    @pytest.mark.parametrize(
        "regime", [el.Regime.FLATLAND, el.Regime.PLANE_STRAIN, el.Regime.THREE_D],
        ids=lambda r: r.value,
    )
    @pytest.mark.parametrize("order", [1, 2])
    def test_jacobian_matches_fd_of_stacked_residual(self, regime, order):
        dim = el.spatial_dim(regime)
        coords, detjw, dn_phys = single_element_geometry(dim, order)
        model = (
            mat.make_material("flatland_neo_hookean", mu=2.0, nu=0.4)
            if regime is el.Regime.FLATLAND
            else mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.4)
        )
        pts, _ = el.gauss_rule(dim, order + 1)
        np_b = el.monomial_basis(dim, order - 1, pts)
        nn = dn_phys.shape[2]
        nb = np_b.shape[1]
        rng = np.random.default_rng(3)
        dofs = np.concatenate(
            [
                0.04 * rng.standard_normal(nn * dim),
                0.1 * rng.standard_normal(nb),
                0.02 * rng.standard_normal(nb),  # J~ - 1 deviations
            ]
        )

        def split(x):
            u = x[: nn * dim].reshape(1, nn, dim)
            p = x[nn * dim : nn * dim + nb].reshape(1, nb)
            j = x[nn * dim + nb :].reshape(1, nb)
            return u, p, j

        def resid(x):
            u, p, j = split(x)
            r, _, _ = el.threefield_element_matrices(
                regime, model, dn_phys, detjw, u, p, j, np_b, np_b
            )
            return r[0]

        u, p, j = split(dofs)
        r, k, _ = el.threefield_element_matrices(
            regime, model, dn_phys, detjw, u, p, j, np_b, np_b
        )
        k_fd = fd_element_jacobian(resid, dofs)
        scale = np.abs(k[0]).max()
        assert np.abs(k[0] - k_fd).max() < 1e-5 * scale
        assert np.abs(k[0] - k[0].T).max() < 1e-9 * scale

    def test_plane_stress_rejected(self):
        coords, detjw, dn_phys = single_element_geometry(2, 1)
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.3)
        pts, _ = el.gauss_rule(2, 2)
        np_b = el.monomial_basis(2, 0, pts)
        with pytest.raises(UnsupportedRegime):
            el.threefield_element_matrices(
                el.Regime.PLANE_STRESS,
                model,
                dn_phys,
                detjw,
                np.zeros((1, 4, 2)),
                np.zeros((1, 1)),
                np.ones((1, 1)),
                np_b,
                np_b,
            )
