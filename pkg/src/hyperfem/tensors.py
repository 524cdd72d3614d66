"""Dense tensor kernels for 2D/3D continuum mechanics.

All functions operate on the trailing tensor axes and broadcast over
arbitrary leading (batch) axes, so one call serves every quadrature point
of a mesh at once.  Second-order tensors are ``(..., d, d)`` arrays,
fourth-order tensors ``(..., d, d, d, d)`` with ``d in {2, 3}``.
Tensors are stored dense and unpacked (no Voigt packing) so symmetry
factors never enter the products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvertedElement, NonSPD, SingularTensor

SINGULAR_REL_EPS = 1e-14


@dataclass(frozen=True)
class Invariants:
    """Scalar invariants of a right Cauchy-Green tensor.

    ``i1`` is the trace, ``i2`` the second invariant in the form
    (tr C)^2/2 + tr(C^2)/2, and ``j`` the volume ratio sqrt(det C).
    All fields broadcast with the input batch shape.
    """

    i1: np.ndarray
    i2: np.ndarray
    j: np.ndarray


def identity2(dim: int) -> np.ndarray:
    """Second-order identity."""
    return np.eye(dim)


def identity4_sym(dim: int) -> np.ndarray:
    """Symmetric fourth-order identity: I_ijkl = (d_ik d_jl + d_il d_jk)/2."""
    eye = np.eye(dim)
    return 0.5 * (np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye))


def dev_projector(dim: int) -> np.ndarray:
    """Deviatoric projector on symmetric tensors: I4_sym - (I x I)/dim."""
    eye = np.eye(dim)
    return identity4_sym(dim) - np.einsum("ij,kl->ijkl", eye, eye) / dim


def det(a: np.ndarray) -> np.ndarray:
    """Determinant over the trailing 2x2 or 3x3 axes."""
    return np.linalg.det(np.asarray(a))


def inverse(a: np.ndarray, rel_eps: float = SINGULAR_REL_EPS) -> np.ndarray:
    """Matrix inverse with a scale-invariant singularity guard.

    Raises SingularTensor when |det A| <= rel_eps * ||A||_F^dim for any
    matrix in the batch.
    """
    a = np.asarray(a, dtype=float)
    dim = a.shape[-1]
    d = np.linalg.det(a)
    scale = np.linalg.norm(a, axis=(-2, -1)) ** dim
    if np.any(np.abs(d) <= rel_eps * scale):
        raise SingularTensor("matrix (numerically) singular in inverse()")
    return np.linalg.inv(a)


def invariants(c: np.ndarray) -> Invariants:
    """Invariants (i1, i2, j) of a symmetric positive definite tensor.

    Raises NonSPD when det C <= 0 anywhere in the batch.
    """
    c = np.asarray(c, dtype=float)
    detc = np.linalg.det(c)
    if np.any(detc <= 0.0):
        raise NonSPD("det C <= 0: tensor is not positive definite")
    i1 = np.trace(c, axis1=-2, axis2=-1)
    tr_c2 = np.einsum("...ij,...ji->...", c, c)
    i2 = 0.5 * (i1**2 + tr_c2)
    return Invariants(i1=i1, i2=i2, j=np.sqrt(detc))


def iso_split(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multiplicative volumetric/isochoric split F = J^(1/d) F_hat.

    Returns (J, F_hat) with det F_hat = 1.  The exponent is 1/3 in 3D and
    1/2 in 2D so unimodularity holds in either dimension.
    Raises InvertedElement when det F <= 0.
    """
    f = np.asarray(f, dtype=float)
    dim = f.shape[-1]
    j = np.linalg.det(f)
    if np.any(j <= 0.0):
        raise InvertedElement("det F <= 0 in iso_split()")
    fhat = f * (j ** (-1.0 / dim))[..., None, None]
    return j, fhat


def dyad_otimes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dyadic product [A x B]_ijkl = A_ij B_kl."""
    return np.einsum("...ij,...kl->...ijkl", a, b)


def dyad_odot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetrised product [A o B]_ijkl = (A_ik B_jl + A_il B_jk)/2."""
    return 0.5 * (
        np.einsum("...ik,...jl->...ijkl", a, b) + np.einsum("...il,...jk->...ijkl", a, b)
    )


def ddot42(a4: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Double contraction of a fourth-order with a second-order tensor."""
    return np.einsum("...ijkl,...kl->...ij", a4, b2)


def push_forward_tangent(f: np.ndarray, cc: np.ndarray) -> np.ndarray:
    """Push a Lagrangian tangent to the spatial configuration.

    c_ijkl = J^-1 F_iI F_jJ F_kK F_lL C_IJKL.  Minor and major symmetries
    of ``cc`` are preserved.  Raises InvertedElement when det F <= 0.
    """
    f = np.asarray(f, dtype=float)
    j = np.linalg.det(f)
    if np.any(j <= 0.0):
        raise InvertedElement("det F <= 0 in push_forward_tangent()")
    c = np.einsum("...iI,...jJ,...kK,...lL,...IJKL->...ijkl", f, f, f, f, cc, optimize=True)
    return c / j[..., None, None, None, None]
