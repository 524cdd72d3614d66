"""Unit tests for the quadrature-point plane stress condensation."""

import numpy as np
import pytest
from scipy.optimize import brentq

from hyperfem import materials as mat
from hyperfem import plane_stress as ps
from hyperfem import tensors as tn
from hyperfem.errors import NoConvergence, NonPhysicalRoot

TIGHT = ps.CondensationSettings(abs_tol=1e-14)


def random_spd2(rng, scale=0.25):
    a = np.eye(2) + scale * rng.standard_normal((2, 2))
    while np.linalg.det(a) < 0.3:
        a = np.eye(2) + scale * rng.standard_normal((2, 2))
    return a.T @ a


def bisection_root(model, cbar):
    """Independent scalar oracle for the out-of-plane stretch."""

    def s33(c33):
        return model.evaluate(ps.embed_c(cbar, c33), tangent=False).S[2, 2]

    lo, hi = 1e-8, 1.0
    while s33(hi) < 0:
        hi *= 2.0
    return brentq(s33, lo, hi, xtol=1e-15)


class TestSolveC33:
    @pytest.mark.parametrize(
        "model",
        [
            mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.3),
            mat.make_material("neo_hookean_alternative", mu=1.0, nu=0.3),
        ],
        ids=lambda m: m.kind,
    )
    def test_reference_state(self, model):
        c33, iters, res = ps.solve_c33(model, np.eye(2))
        assert c33 == pytest.approx(1.0, abs=1e-12)
        assert abs(res) <= 1e-10 * model.mu

    def test_alternative_equibiaxial_against_bisection(self):
        # Root of mu [C33 - 1] + kappa J [J - 1] = 0 with J = sqrt(1.4641 C33),
        # found independently by bisection before the build: 0.8085126616.
        model = mat.make_material("neo_hookean_alternative", mu=1.0, kappa=2.0)
        cbar = np.diag([1.21, 1.21])
        c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
        assert c33 == pytest.approx(0.8085126616, abs=1e-9)
        assert c33 == pytest.approx(bisection_root(model, cbar), abs=1e-12)

    def test_decoupled_near_incompressible_limit(self):
        # Without a det(Cbar)-1 hint the kappa*eps rounding floor of S33
        # sits near 2e-12 at kappa/mu = 1e4, so loosen the tolerance a bit
        # (still far below the guaranteed 1e-10 * mu bound).
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, kappa=1e4)
        cbar = np.diag([1.44, 1.0])
        loose = ps.CondensationSettings(abs_tol=1e-11)
        c33, _, _ = ps.solve_c33(model, cbar, settings=loose)
        assert c33 == pytest.approx(bisection_root(model, cbar), rel=1e-10)
        assert c33 == pytest.approx(1.0 / 1.44, abs=5e-3 / 1.44)
        assert abs(c33 * 1.44 - 1.0) < 5e-3

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(4)
        model = mat.make_material("neo_hookean_decoupled", mu=2.0, nu=0.35)
        cbars = np.stack([random_spd2(rng) for _ in range(12)])
        c33s, iters, res = ps.solve_c33(model, cbars)
        for k in range(12):
            single, _, _ = ps.solve_c33(model, cbars[k])
            assert c33s[k] == pytest.approx(single, rel=1e-10)
        assert np.all(np.abs(res) <= 1e-10 * model.mu)

    def test_residual_tolerance_enforced(self):
        rng = np.random.default_rng(5)
        model = mat.make_material("neo_hookean_decoupled", mu=80.1938, nu=0.4999)
        for _ in range(20):
            cbar = random_spd2(rng)
            _, _, res = ps.solve_c33(model, cbar)
            assert abs(res) <= 1e-10 * model.mu

    def test_iteration_budget_exhaustion(self):
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, kappa=1e4)
        with pytest.raises(NoConvergence):
            ps.solve_c33(
                model,
                np.diag([4.0, 4.0]),
                settings=ps.CondensationSettings(abs_tol=1e-14, max_iters=1),
            )

    def test_rejects_nonpositive_init(self):
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.3)
        with pytest.raises(NonPhysicalRoot):
            ps.solve_c33(model, np.eye(2), init=-1.0)

    def test_quadratic_inner_convergence(self):
        # Once |S33| < 1e-2 mu, successive residuals decay superlinearly.
        rng = np.random.default_rng(6)
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.45)
        checked = 0
        for _ in range(100):
            cbar = random_spd2(rng, scale=0.35)
            trace = []
            ps.solve_c33(model, cbar, settings=TIGHT, residual_trace=trace)
            seq = [float(np.max(r)) for r in trace if 1e-14 < np.max(r) < 1e-2 * model.mu]
            for r0, r1 in zip(seq, seq[1:]):
                assert r1 <= 50.0 * r0**2 + 1e-14, f"slow decay: {seq}"
                checked += 1
        assert checked > 20

    def test_in_plane_frame_indifference(self):
        rng = np.random.default_rng(7)
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.3)
        for _ in range(10):
            cbar = random_spd2(rng)
            th = rng.uniform(0, 2 * np.pi)
            q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            a, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            b, _, _ = ps.solve_c33(model, q.T @ cbar @ q, settings=TIGHT)
            assert a == pytest.approx(b, rel=1e-12)

    def test_incompressibility_limit_monotone(self):
        cbar = np.diag([1.3, 0.9])
        jbar = np.sqrt(np.linalg.det(cbar))
        devs = []
        loose = ps.CondensationSettings(abs_tol=1e-11)
        for kap in (1e2, 1e3, 1e4):
            model = mat.make_material("neo_hookean_decoupled", mu=1.0, kappa=kap)
            c33, _, _ = ps.solve_c33(model, cbar, settings=loose)
            devs.append(abs(np.sqrt(c33) * jbar - 1.0))
        assert devs[0] > devs[1] > devs[2]


class TestCondensedStress:
    def test_reference(self):
        model = mat.make_material("neo_hookean_decoupled", mu=1.0, nu=0.3)
        sbar = ps.condensed_stress(model, np.eye(2), 1.0)
        assert np.abs(sbar).max() < 1e-14

    def test_decoupled_closed_form_match(self):
        rng = np.random.default_rng(8)
        model = mat.make_material("neo_hookean_decoupled", mu=1.7, nu=0.35)
        for _ in range(20):
            cbar = random_spd2(rng)
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            generic = ps.condensed_stress(model, cbar, c33)
            j = np.sqrt(c33 * np.linalg.det(cbar))
            ref = model.mu * j ** (-2.0 / 3.0) * (np.eye(2) - c33 * np.linalg.inv(cbar))
            assert np.abs(generic - ref).max() < 1e-12 * max(np.abs(ref).max(), model.mu)

    def test_alternative_closed_form_match(self):
        rng = np.random.default_rng(9)
        model = mat.make_material("neo_hookean_alternative", mu=1.7, nu=0.35)
        for _ in range(20):
            cbar = random_spd2(rng)
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            generic = ps.condensed_stress(model, cbar, c33)
            ref = model.mu * (np.eye(2) - c33 * np.linalg.inv(cbar))
            assert np.abs(generic - ref).max() < 1e-12 * max(np.abs(ref).max(), model.mu)

    def test_uniaxial_curve_against_energy_minimisation_oracle(self):
        # Frozen from an independent root solve of S22 = S33 = 0 on the full
        # 3D stress (equivalent to minimising psi over C22, C33 at fixed C11).
        golden = {
            1.10: 0.22569045828382406,
            1.25: 0.4531253377091271,
            1.50: 0.6696090982803247,
            1.75: 0.7855488678862552,
            2.00: 0.8530761837901117,
        }
        model = mat.make_material("neo_hookean_alternative", mu=1.0, kappa=2.0)
        for lam, s11_ref in golden.items():
            # In-plane uniaxial condition: find C22 with condensed S22 = 0.
            def s22(c22):
                cbar = np.diag([lam**2, c22])
                c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
                return ps.condensed_stress(model, cbar, c33)[1, 1]

            c22 = brentq(s22, 0.2, 1.5, xtol=1e-14)
            cbar = np.diag([lam**2, c22])
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            s11 = ps.condensed_stress(model, cbar, c33)[0, 0]
            assert s11 == pytest.approx(s11_ref, rel=1e-9)


class TestCondensedTangent:
    def test_linear_plane_stress_moduli_at_reference(self):
        mu, nu = 2.0, 0.3
        model = mat.make_material("neo_hookean_decoupled", mu=mu, nu=nu)
        ccbar = ps.condensed_tangent(model, np.eye(2), 1.0)
        lam = model.kappa - 2.0 * mu / 3.0
        lam_ps = 2.0 * lam * mu / (lam + 2.0 * mu)
        ref = lam_ps * tn.dyad_otimes(np.eye(2), np.eye(2)) + 2.0 * mu * tn.identity4_sym(2)
        assert np.abs(ccbar - ref).max() < 1e-12 * np.abs(ref).max()

    def test_against_fd_with_resolve(self):
        rng = np.random.default_rng(10)
        model = mat.make_material("neo_hookean_decoupled", mu=1.7, nu=0.35)

        def sbar_of(cbar):
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            return ps.condensed_stress(model, cbar, c33)

        for _ in range(10):
            cbar = random_spd2(rng)
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            ccbar = ps.condensed_tangent(model, cbar, c33)
            hdir = rng.standard_normal((2, 2))
            hdir = 0.5 * (hdir + hdir.T)
            h = 1e-6
            fd = (sbar_of(cbar + h * hdir) - sbar_of(cbar - h * hdir)) / (2 * h)
            ref = 0.5 * tn.ddot42(ccbar, hdir)
            assert np.abs(fd - ref).max() < 1e-6 * max(np.abs(ref).max(), model.mu)

    def test_major_symmetry(self):
        rng = np.random.default_rng(11)
        model = mat.make_material("neo_hookean_decoupled", mu=1.7, nu=0.45)
        cbar = random_spd2(rng)
        c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
        cc = ps.condensed_tangent(model, cbar, c33)
        assert np.abs(cc - np.transpose(cc, (2, 3, 0, 1))).max() < 1e-12 * np.abs(cc).max()


class TestClosedForms:
    def test_decoupled_reference(self):
        params = mat.MaterialParams.from_nu(1.3, 0.3)
        sbar, _, gamma, _ = ps.closed_form_decoupled(np.eye(2), 1.0, params)
        assert gamma == pytest.approx(-params.mu, rel=1e-14)
        assert np.abs(sbar).max() < 1e-14

    def test_alternative_reference(self):
        params = mat.MaterialParams.from_nu(1.3, 0.3)
        sbar, _, alpha = ps.closed_form_alternative(np.eye(2), 1.0, params)
        assert alpha == pytest.approx(0.0, abs=1e-14)
        assert np.abs(sbar).max() < 1e-14

    def test_decoupled_matches_generic_on_50_states(self):
        rng = np.random.default_rng(12)
        model = mat.make_material("neo_hookean_decoupled", mu=1.7, nu=0.35)
        for _ in range(50):
            cbar = random_spd2(rng)
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            s_g = ps.condensed_stress(model, cbar, c33)
            cc_g = ps.condensed_tangent(model, cbar, c33)
            s_c, cc_c, _, _ = ps.closed_form_decoupled(cbar, c33, model.params)
            assert np.abs(s_g - s_c).max() < 1e-12 * max(np.abs(s_g).max(), model.mu)
            assert np.abs(cc_g - cc_c).max() < 1e-10 * np.abs(cc_g).max()

    def test_alternative_matches_generic_on_50_states(self):
        rng = np.random.default_rng(13)
        model = mat.make_material("neo_hookean_alternative", mu=1.7, nu=0.35)
        for _ in range(50):
            cbar = random_spd2(rng)
            c33, _, _ = ps.solve_c33(model, cbar, settings=TIGHT)
            s_g = ps.condensed_stress(model, cbar, c33)
            cc_g = ps.condensed_tangent(model, cbar, c33)
            s_c, cc_c, _ = ps.closed_form_alternative(cbar, c33, model.params)
            assert np.abs(s_g - s_c).max() < 1e-12 * max(np.abs(s_g).max(), model.mu)
            assert np.abs(cc_g - cc_c).max() < 1e-10 * np.abs(cc_g).max()

    def test_decoupled_volume_derivative_identity(self):
        # dJ/dC33 = J_bar^2 / (2 J), checked by finite differences.
        rng = np.random.default_rng(14)
        cbar = random_spd2(rng)
        c33 = 0.8
        jbar2 = np.linalg.det(cbar)
        j_of = lambda c: np.sqrt(c * jbar2)
        h = 1e-7
        fd = (j_of(c33 + h) - j_of(c33 - h)) / (2 * h)
        assert fd == pytest.approx(0.5 * jbar2 / j_of(c33), rel=1e-8)

    def test_alternative_alpha_gradient_vs_fd(self):
        # d alpha / d C_bar = kappa C33 det(C_bar) [1 - J^-1/2] C_bar^-1.
        rng = np.random.default_rng(15)
        params = mat.MaterialParams.from_nu(1.7, 0.35)
        cbar = random_spd2(rng)
        c33 = 0.85

        def alpha_of(cb):
            j = np.sqrt(c33 * np.linalg.det(cb))
            return params.kappa * j * (j - 1.0)

        grad_ref = (
            params.kappa
            * c33
            * np.linalg.det(cbar)
            * (1.0 - 0.5 / np.sqrt(c33 * np.linalg.det(cbar)))
            * np.linalg.inv(cbar)
        )
        h = 1e-7
        for _ in range(5):
            hdir = rng.standard_normal((2, 2))
            hdir = 0.5 * (hdir + hdir.T)
            fd = (alpha_of(cbar + h * hdir) - alpha_of(cbar - h * hdir)) / (2 * h)
            assert fd == pytest.approx(np.einsum("ij,ij->", grad_ref, hdir), rel=1e-7)

    def test_condense_state_record(self):
        rng = np.random.default_rng(16)
        model = mat.make_material("neo_hookean_decoupled", mu=80.1938, nu=0.4999)
        cbars = np.stack([random_spd2(rng) for _ in range(5)])
        state = ps.condense(model, cbars)
        assert np.all(state.C33 > 0)
        assert np.all(np.abs(state.residual_S33) <= 1e-10 * model.mu)
        assert state.Sbar.shape == (5, 2, 2)
        assert state.CCbar.shape == (5, 2, 2, 2, 2)
