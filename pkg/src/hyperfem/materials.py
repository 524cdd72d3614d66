"""Hyperelastic strain-energy models with exact analytic stresses and tangents.

Every model here is isotropic and expressed through the first invariant
``i1 = tr C`` and the volume ratio ``J = sqrt(det C)``.  Stress and tangent
then follow from the generic relations

    S  = 2 psi_1 I + psi_J J C^-1
    CC = 4 psi_11 I x I + 2 J psi_1J [I x C^-1 + C^-1 x I]
         + J [J psi_JJ + psi_J] C^-1 x C^-1 - 2 J psi_J C^-1 o C^-1

where subscripts denote partial derivatives of the energy density.  The
tangents are hand-derived closed forms, never numerical differentiation;
finite differences appear only as test oracles.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NonPositiveJ,
    NonSPD,
    UnsupportedModel,
)
from .tensors import dev_projector, dyad_odot, dyad_otimes, identity2, identity4_sym, iso_split


class VolLaw(str, enum.Enum):
    """Volumetric energy family psi_vol(J) = kappa * G(J)."""

    SQUARED_J_MINUS_ONE = "squared_j_minus_one"      # G = (J-1)^2 / 2
    QUARTER_JSQ_MINUS_LOG = "quarter_jsq_minus_log"  # G = (J^2 - 1 - 2 ln J) / 4
    LOG_SQUARED = "log_squared"                      # G = (ln J)^2 / 2
    J_LOG_J = "j_log_j"                              # G = J ln J - J + 1


DEFAULT_VOL_LAW = VolLaw.QUARTER_JSQ_MINUS_LOG


def vol_derivs(law: VolLaw, j: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value and first two derivatives of G(J).

    Each variant satisfies G(1) = 0, G'(1) = 0, G''(1) = 1 > 0, so the
    reference state is stress free with linearised bulk modulus kappa.
    Raises NonPositiveJ when any J <= 0.
    """
    j = np.asarray(j, dtype=float)
    if np.any(j <= 0.0):
        raise NonPositiveJ("volumetric law evaluated at J <= 0")
    return vol_derivs_delta(law, j - 1.0)


def vol_derivs_delta(law: VolLaw, delta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """vol_derivs parametrised by delta = J - 1, cancellation free near J = 1.

    Nearly incompressible states have |delta| ~ 1e-5 while kappa / mu can
    reach 1e4, so forming J - 1 or ln J from J directly would leave a
    kappa * eps noise floor in every stress/residual; the delta forms keep
    the volumetric terms accurate to relative rounding instead.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= -1.0):
        raise NonPositiveJ("volumetric law evaluated at J <= 0")
    j = 1.0 + delta
    law = VolLaw(law)
    if law is VolLaw.SQUARED_J_MINUS_ONE:
        return 0.5 * delta**2, delta, np.ones_like(delta)
    if law is VolLaw.QUARTER_JSQ_MINUS_LOG:
        # J^2 - 1 = delta (2 + delta)
        jsq_m1 = delta * (2.0 + delta)
        g = 0.25 * (jsq_m1 - 2.0 * np.log1p(delta))
        return g, 0.5 * jsq_m1 / j, 0.5 * (1.0 + 1.0 / j**2)
    if law is VolLaw.LOG_SQUARED:
        lj = np.log1p(delta)
        return 0.5 * lj**2, lj / j, (1.0 - lj) / j**2
    # J_LOG_J:  J ln J - J + 1 = (1 + delta) ln(1 + delta) - delta
    lj = np.log1p(delta)
    return j * lj - delta, lj, 1.0 / j


def kappa_from_nu(mu: float, nu: float) -> float:
    """Bulk modulus from shear modulus and Poisson's ratio.

    kappa = 2 mu (1 + nu) / (3 (1 - 2 nu)); rejects nu outside (-1, 0.5).
    """
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in (-1, 0.5), got {nu}")
    return 2.0 * mu * (1.0 + nu) / (3.0 * (1.0 - 2.0 * nu))


def nu_from_moduli(mu: float, kappa: float) -> float:
    """Poisson's ratio nu = (3 kappa - 2 mu) / (2 (3 kappa + mu))."""
    return (3.0 * kappa - 2.0 * mu) / (2.0 * (3.0 * kappa + mu))


@dataclass(frozen=True)
class MaterialParams:
    """Elastic moduli in MPa.  ``nu`` is provenance only and, when given,
    must be consistent with (mu, kappa) to 1e-10."""

    mu: float
    kappa: float
    nu: float | None = None

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.nu is not None:
            implied = nu_from_moduli(self.mu, self.kappa)
            if abs(self.nu - implied) > 1e-10:
                raise ValueError(
                    f"inconsistent parameters: nu={self.nu} but (mu, kappa) imply {implied}"
                )

    @classmethod
    def from_nu(cls, mu: float, nu: float) -> "MaterialParams":
        return cls(mu=mu, kappa=kappa_from_nu(mu, nu), nu=nu)


@dataclass(frozen=True)
class StressTangent:
    """Energy density, Piola-Kirchhoff stress and Lagrangian tangent CC = 2 dS/dC.

    ``gamma``/``alpha`` are the model-specific pressure-like coefficients of
    the C^-1 stress term (decoupled / alternative neo-Hookean); None for
    models that do not define them.
    """

    psi: np.ndarray
    S: np.ndarray
    CC: np.ndarray | None
    gamma: np.ndarray | None = None
    alpha: np.ndarray | None = None


class Material:
    """Base class: isotropic hyperelastic model psi(i1, J)."""

    kind: str = "abstract"
    dim: int = 3
    has_split: bool = False

    def __init__(self, params: MaterialParams, vol_law: VolLaw = DEFAULT_VOL_LAW):
        self.params = params
        self.vol_law = VolLaw(vol_law)

    def __repr__(self):
        return (
            f"{type(self).__name__}(mu={self.params.mu}, kappa={self.params.kappa}, "
            f"vol_law={self.vol_law.value})"
        )

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def kappa(self) -> float:
        return self.params.kappa

    def _derivs(self, i1, j, vol3):
        """Return (psi, psi_1, psi_J, psi_11, psi_1J, psi_JJ); ``vol3`` is the
        (G, G', G'') triple of the volumetric law at J."""
        raise NotImplementedError

    def _iso_derivs(self, i1, j):
        """Same tuple for the isochoric part alone (split models only)."""
        raise UnsupportedModel(f"{self.kind} has no isochoric/volumetric split")

    def pressure(self, j, delta=None) -> tuple[np.ndarray, np.ndarray]:
        """Constitutive pressure p = d psi_vol / dJ and its derivative dp/dJ.

        Pass ``delta`` = J - 1 when it is known more accurately than J
        itself (near-incompressible states).
        """
        if delta is not None:
            _, dg, d2g = vol_derivs_delta(self.vol_law, delta)
        else:
            _, dg, d2g = vol_derivs(self.vol_law, j)
        return self.kappa * dg, self.kappa * d2g

    def evaluate(self, c: np.ndarray, tangent: bool = True, jm1=None) -> StressTangent:
        """Energy, stress S = 2 dpsi/dC and tangent CC = 2 dS/dC at C.

        ``c`` has shape (..., dim, dim); outputs broadcast with the batch.
        ``jm1`` optionally supplies J - 1 computed without cancellation
        (e.g. from the displacement gradient); it must be consistent with
        det C and keeps the kappa-scaled terms accurate near J = 1.
        Raises DimensionMismatch for wrong trailing shape and NonSPD when
        det C <= 0 anywhere.
        """
        c = np.asarray(c, dtype=float)
        d = self.dim
        if c.shape[-2:] != (d, d):
            raise DimensionMismatch(f"{self.kind} expects (..., {d}, {d}) tensors, got {c.shape}")
        detc = np.linalg.det(c)
        if np.any(detc <= 0.0):
            raise NonSPD("det C <= 0 in material evaluation")
        i1 = np.trace(c, axis1=-2, axis2=-1)
        if jm1 is None:
            j = np.sqrt(detc)
            vol3 = vol_derivs(self.vol_law, j)
        else:
            jm1 = np.broadcast_to(np.asarray(jm1, dtype=float), detc.shape)
            j = 1.0 + jm1
            vol3 = vol_derivs_delta(self.vol_law, jm1)
        psi, p1, pj, p11, p1j, pjj = self._derivs(i1, j, vol3)
        cinv = np.linalg.inv(c)
        eye = np.broadcast_to(identity2(d), c.shape)
        s = 2.0 * p1[..., None, None] * eye + (pj * j)[..., None, None] * cinv
        cc = None
        if tangent:
            b4 = lambda x: x[..., None, None, None, None]
            cc = (
                b4(4.0 * p11) * dyad_otimes(eye, eye)
                + b4(2.0 * j * p1j) * (dyad_otimes(eye, cinv) + dyad_otimes(cinv, eye))
                + b4(j * (j * pjj + pj)) * dyad_otimes(cinv, cinv)
                - b4(2.0 * j * pj) * dyad_odot(cinv, cinv)
            )
        gamma = alpha = None
        if self.kind == "neo_hookean_decoupled":
            gamma = pj * j
        elif self.kind == "neo_hookean_alternative":
            alpha = self.kappa * j * (j - 1.0)
        return StressTangent(psi=psi, S=s, CC=cc, gamma=gamma, alpha=alpha)


class NeoHookeanDecoupled(Material):
    """Neo-Hookean energy with isochoric/volumetric split (3D):

    psi = mu/2 [J^(-2/3) i1 - 3] + kappa G(J).
    """

    kind = "neo_hookean_decoupled"
    dim = 3
    has_split = True

    def _derivs(self, i1, j, vol3):
        mu = self.mu
        g, dg, d2g = vol3
        a = j ** (-2.0 / 3.0)
        psi = 0.5 * mu * (a * i1 - 3.0) + self.kappa * g
        p1 = 0.5 * mu * a
        pj = -mu / 3.0 * i1 * a / j + self.kappa * dg
        p11 = np.zeros_like(i1)
        p1j = -mu / 3.0 * a / j + np.zeros_like(i1)
        pjj = 5.0 * mu / 9.0 * i1 * a / j**2 + self.kappa * d2g
        return psi, p1, pj, p11, p1j, pjj

    def _iso_derivs(self, i1, j):
        mu = self.mu
        a = j ** (-2.0 / 3.0)
        psi = 0.5 * mu * (a * i1 - 3.0)
        return (
            psi,
            0.5 * mu * a,
            -mu / 3.0 * i1 * a / j,
            np.zeros_like(i1),
            -mu / 3.0 * a / j + np.zeros_like(i1),
            5.0 * mu / 9.0 * i1 * a / j**2,
        )


class NeoHookeanAlternative(Material):
    """Neo-Hookean energy in the total first invariant (3D):

    psi = mu/2 [i1 - 3 - 2 ln J] + kappa/2 [J - 1]^2.

    The volumetric term is fixed to (J-1)^2/2 by construction.
    """

    kind = "neo_hookean_alternative"
    dim = 3
    has_split = False

    def __init__(self, params: MaterialParams, vol_law: VolLaw = VolLaw.SQUARED_J_MINUS_ONE):
        if VolLaw(vol_law) is not VolLaw.SQUARED_J_MINUS_ONE:
            raise UnsupportedModel(
                "the alternative neo-Hookean model fixes the volumetric law to (J-1)^2/2"
            )
        super().__init__(params, VolLaw.SQUARED_J_MINUS_ONE)

    def _derivs(self, i1, j, vol3):
        mu = self.mu
        g, dg, d2g = vol3
        psi = 0.5 * mu * (i1 - 3.0 - 2.0 * np.log(j)) + self.kappa * g
        p1 = np.full_like(i1, 0.5 * mu)
        pj = -mu / j + self.kappa * dg
        p11 = np.zeros_like(i1)
        p1j = np.zeros_like(i1)
        pjj = mu / j**2 + self.kappa * d2g
        return psi, p1, pj, p11, p1j, pjj


class FlatlandNeoHookean(Material):
    """Truly two-dimensional neo-Hookean energy:

    psi = mu/2 [i1 / J - 2] + kappa G(J)

    with the unimodular 2D hat C_hat = J^-1 C, so J = sqrt(det C) here is
    the in-plane area ratio.
    """

    kind = "flatland_neo_hookean"
    dim = 2
    has_split = True

    def _derivs(self, i1, j, vol3):
        mu = self.mu
        g, dg, d2g = vol3
        psi = 0.5 * mu * (i1 / j - 2.0) + self.kappa * g
        p1 = 0.5 * mu / j + np.zeros_like(i1)
        pj = -0.5 * mu * i1 / j**2 + self.kappa * dg
        p11 = np.zeros_like(i1)
        p1j = -0.5 * mu / j**2 + np.zeros_like(i1)
        pjj = mu * i1 / j**3 + self.kappa * d2g
        return psi, p1, pj, p11, p1j, pjj

    def _iso_derivs(self, i1, j):
        mu = self.mu
        psi = 0.5 * mu * (i1 / j - 2.0)
        return (
            psi,
            0.5 * mu / j + np.zeros_like(i1),
            -0.5 * mu * i1 / j**2,
            np.zeros_like(i1),
            -0.5 * mu / j**2 + np.zeros_like(i1),
            mu * i1 / j**3,
        )


MODEL_KINDS = {
    "neo_hookean_decoupled": NeoHookeanDecoupled,
    "neo_hookean_alternative": NeoHookeanAlternative,
    "flatland_neo_hookean": FlatlandNeoHookean,
}


def make_material(
    kind: str,
    mu: float,
    nu: float | None = None,
    kappa: float | None = None,
    vol_law: VolLaw | str = DEFAULT_VOL_LAW,
) -> Material:
    """Build a material from (mu, nu) or (mu, kappa)."""
    if kind not in MODEL_KINDS:
        raise UnsupportedModel(f"unknown material kind {kind!r}")
    if kappa is None:
        if nu is None:
            raise ValueError("either nu or kappa must be given")
        params = MaterialParams.from_nu(mu, nu)
    else:
        params = MaterialParams(mu=mu, kappa=kappa, nu=nu)
    cls = MODEL_KINDS[kind]
    if cls is NeoHookeanAlternative:
        return cls(params)
    return cls(params, VolLaw(vol_law))


def split_stress(model: Material, c: np.ndarray):
    """Isochoric/volumetric stress split S = S_iso + S_vol.

    Returns (S_iso, S_vol, p, P_proj) where p is the constitutive pressure
    and P_proj = J^(-2/d) [I4_sym - C^-1 x C / d] is the projector
    d C_hat / d C.  Only split-capable (decoupled-type) models qualify.
    """
    if not model.has_split:
        raise UnsupportedModel(f"{model.kind} has no isochoric/volumetric split")
    c = np.asarray(c, dtype=float)
    d = model.dim
    detc = np.linalg.det(c)
    if np.any(detc <= 0.0):
        raise NonSPD("det C <= 0 in split_stress")
    j = np.sqrt(detc)
    cinv = np.linalg.inv(c)
    eye = np.broadcast_to(identity2(d), c.shape)
    p, _ = model.pressure(j)
    s_vol = (p * j)[..., None, None] * cinv
    # S_hat = 2 d psi_iso / d C_hat = mu * I for the neo-Hookean family.
    s_hat = model.mu * eye
    a = j ** (-2.0 / d)
    trace_cs = np.einsum("...ij,...ij->...", c, s_hat)
    s_iso = a[..., None, None] * (s_hat - (trace_cs / d)[..., None, None] * cinv)
    p_proj = a[..., None, None, None, None] * (
        identity4_sym(d) - dyad_otimes(cinv, c) / d
    )
    return s_iso, s_vol, p, p_proj


def eulerian_split_tangent(model: Material, f: np.ndarray):
    """Eulerian tangent split c = c_iso + c_vol and Kirchhoff stress split.

    Returns (c_iso, c_vol, tau_iso, tau_vol) with

        c_vol = [p + J dp/dJ] I x I - 2 p I4_sym
        J c_iso = D : c_hat : D + (2/d) tr(tau_hat) D
                  - (2/d) [I x tau_iso + tau_iso x I]

    where D is the deviatoric projector, tau_hat = mu b_hat for the
    neo-Hookean family (whose c_hat vanishes identically), tau_iso the
    deviator of tau_hat and tau_vol = p J I.
    """
    if not model.has_split:
        raise UnsupportedModel(f"{model.kind} has no isochoric/volumetric split")
    f = np.asarray(f, dtype=float)
    d = model.dim
    j, fhat = iso_split(f)
    bhat = fhat @ np.swapaxes(fhat, -1, -2)
    tau_hat = model.mu * bhat
    tr_hat = np.trace(tau_hat, axis1=-2, axis2=-1)
    eye = np.broadcast_to(identity2(d), f.shape)
    tau_iso = tau_hat - (tr_hat / d)[..., None, None] * eye
    p, dp = model.pressure(j)
    tau_vol = (p * j)[..., None, None] * eye
    dev4 = dev_projector(d)
    b4 = lambda x: x[..., None, None, None, None]
    j_c_iso = (2.0 / d) * (
        b4(tr_hat) * dev4
        - (dyad_otimes(eye, tau_iso) + dyad_otimes(tau_iso, eye))
    )
    c_iso = j_c_iso / b4(j)
    c_vol = b4(p + j * dp) * dyad_otimes(eye, eye) - b4(2.0 * p) * identity4_sym(d)
    return c_iso, c_vol, tau_iso, tau_vol
