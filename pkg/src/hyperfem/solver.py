"""Incremental load stepping with a global Newton iteration.

Each of the equal load increments ramps both the dead loads and any
nonzero Dirichlet amplitudes by the load factor, then iterates
K du = R on the free dofs until ||R|| <= max(rel * ||R0||, abs).  The
linear solves use a sparse direct LU factorisation; an optional
residual-halving backtracking guards the extreme-compression cases.
Plane stress quadrature points warm-start their nested C33 solve from the
previous load step's converged values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Assembler, Problem
from .elements import Formulation, Regime
from .errors import HyperFemError, NewtonDiverged, SingularSystem
from .plane_stress import CondensationSettings, InitStrategy
from .postprocess import FieldSnapshot, build_snapshot


@dataclass(frozen=True)
class SolveSettings:
    """Newton convergence: ||R|| <= max(rel * ||R0||, abs).

    The absolute floor (force units) matters for nearly incompressible
    materials, where the kappa-scaled pressure terms leave a roundoff floor
    of about kappa * eps per quadrature point in the assembled residual.
    """

    n_load_steps: int = 10
    newton_rel_tol: float = 1e-10
    newton_abs_tol: float = 1e-7
    max_newton_iters: int = 25
    line_search: bool = False
    max_halvings: int = 12
    condensation: CondensationSettings = field(default_factory=CondensationSettings)

    def __post_init__(self):
        if self.n_load_steps < 1:
            raise ValueError("n_load_steps must be >= 1")
        if self.newton_rel_tol <= 0 or self.newton_abs_tol <= 0:
            raise ValueError("Newton tolerances must be positive")


@dataclass
class StepLog:
    step: int
    load_factor: float
    residuals: list[float] = field(default_factory=list)
    max_inner_iters: int = 0
    max_abs_s33: float = 0.0


@dataclass
class ConvergenceLog:
    steps: list[StepLog] = field(default_factory=list)

    def fitted_orders(self) -> list[float]:
        """Observed Newton convergence order per load step.

        Fits log ||R_{k+1}|| = q log ||R_k|| + c by least squares over the
        last three Newton steps.  The final recorded residual is excluded
        when enough iterates exist: the iteration stops at the first value
        below the tolerance, so that landing samples the assembly rounding
        floor (or an arbitrary depth of quadratic overshoot), not the rate.
        Steps with fewer than three usable residuals contribute nothing.
        """
        orders = []
        for s in self.steps:
            r = [x for x in s.residuals if x > 0.0]
            if len(r) >= 4:
                r = r[:-1]
            tail = r[-4:]
            if len(tail) < 3:
                continue
            x = np.log(tail[:-1])
            y = np.log(tail[1:])
            dx = x - x.mean()
            var = float(dx @ dx)
            if var <= 0.0:
                continue
            orders.append(float(dx @ (y - y.mean()) / var))
        return orders


@dataclass
class SolutionHistory:
    snapshots: list[FieldSnapshot] = field(default_factory=list)

    @property
    def final(self) -> FieldSnapshot:
        return self.snapshots[-1]


def linear_solve(k: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Sparse direct solve targeting a residual of 1e-10 ||rhs||.

    Up to three rounds of iterative refinement chase the target; the hard
    failure threshold additionally allows the backward-error bound
    eps ||K||_inf ||x||, which is what an LU factorisation can guarantee
    on ill-conditioned tangents near extreme deformation.
    Raises SingularSystem when the factorisation fails or the solution is
    not usable under either bound.
    """
    rhs = np.asarray(rhs, dtype=float)
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0.0:
        return np.zeros_like(rhs)
    kc = sp.csc_matrix(k)
    try:
        lu = spla.splu(kc)
        x = lu.solve(rhs)
    except (RuntimeError, ValueError) as exc:
        raise SingularSystem(f"sparse factorisation failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("sparse solve produced non-finite values")
    target = 1e-10 * rnorm
    resid = rhs - kc @ x
    for _ in range(3):
        if np.linalg.norm(resid) <= target:
            return x
        x = x + lu.solve(resid)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("iterative refinement produced non-finite values")
        resid = rhs - kc @ x
    knorm = spla.norm(kc, np.inf)
    backward = 40.0 * np.finfo(float).eps * knorm * np.linalg.norm(x, np.inf)
    if np.linalg.norm(resid) > max(target, backward):
        raise SingularSystem(
            f"linear solve residual {np.linalg.norm(resid):.3e} exceeds both "
            f"1e-10 * ||rhs|| = {target:.3e} and the backward bound {backward:.3e}"
        )
    return x


def run(problem: Problem, settings: SolveSettings | None = None):
    """Solve the load program; returns (SolutionHistory, ConvergenceLog)."""
    settings = settings or SolveSettings()
    asm = Assembler(problem, settings.condensation)
    lay = asm.layout
    free = asm.free
    u = asm.initial_state()
    # C33 warm start: the converged roots of the most recent accepted state
    # (unity before the first solve); refreshed on every accepted iterate so
    # the nested Newton always starts from a nearby root.
    warm = settings.condensation.init_strategy is InitStrategy.PREVIOUS_CONVERGED
    c33_state = asm.initial_c33()

    history = SolutionHistory()
    log = ConvergenceLog()
    n_steps = settings.n_load_steps

    for step in range(1, n_steps + 1):
        lam = step / n_steps
        asm.apply_dirichlet(u, lam)
        slog = StepLog(step=step, load_factor=lam)
        log.steps.append(slog)

        res = asm.assemble(u, c33_state)
        if warm and res.c33 is not None:
            c33_state = res.c33
        r = res.R + lam * asm.f_ext
        rn = float(np.linalg.norm(r[free]))
        slog.residuals.append(rn)
        slog.max_inner_iters = max(slog.max_inner_iters, res.max_inner_iters)
        slog.max_abs_s33 = max(slog.max_abs_s33, res.max_abs_s33)
        r0 = rn
        tol = max(settings.newton_rel_tol * r0, settings.newton_abs_tol)

        it = 0
        while rn > tol:
            if not np.isfinite(rn):
                raise NewtonDiverged(f"step {step}: residual is not finite")
            if it >= settings.max_newton_iters:
                raise NewtonDiverged(
                    f"step {step}: {settings.max_newton_iters} Newton iterations "
                    f"exhausted (latest ||R|| = {rn:.3e}, target {tol:.3e})"
                )
            du = linear_solve(res.K[free][:, free], r[free])
            if settings.line_search:
                u, res, rn_new = _backtrack(asm, u, du, free, lam, c33_state, rn, settings)
            else:
                u[free] += du
                res = asm.assemble(u, c33_state)
                rn_new = float(np.linalg.norm((res.R + lam * asm.f_ext)[free]))
            if warm and res.c33 is not None:
                c33_state = res.c33
            r = res.R + lam * asm.f_ext
            rn = rn_new
            slog.residuals.append(rn)
            slog.max_inner_iters = max(slog.max_inner_iters, res.max_inner_iters)
            slog.max_abs_s33 = max(slog.max_abs_s33, res.max_abs_s33)
            it += 1
        snap = build_snapshot(
            problem.regime,
            lam,
            u[: lay.n_u].reshape(lay.n_nodes, lay.ncomp),
            res.fields,
            problem.dmesh.n_elems,
        )
        if problem.formulation is Formulation.THREE_FIELD:
            # element means of the discontinuous fields (constant term of the
            # basis; the dilatation dof stores J~ - 1)
            snap.ptilde = u[lay.p_dofs(np.arange(lay.n_elems))][:, 0].copy()
            snap.jtilde = 1.0 + u[lay.j_dofs(np.arange(lay.n_elems))][:, 0]
        history.snapshots.append(snap)
    return history, log


def _backtrack(asm, u, du, free, lam, c33_state, rn_old, settings):
    """Residual-halving line search; rejects steps that invert elements or
    break the nested condensation, halving up to max_halvings times."""
    alpha = 1.0
    best = None
    for _ in range(settings.max_halvings + 1):
        trial = u.copy()
        trial[free] += alpha * du
        try:
            res = asm.assemble(trial, c33_state)
            rn = float(np.linalg.norm((res.R + lam * asm.f_ext)[free]))
        except HyperFemError:
            alpha *= 0.5
            continue
        if np.isfinite(rn) and rn < rn_old:
            return trial, res, rn
        if best is None or (np.isfinite(rn) and rn < best[2]):
            best = (trial, res, rn)
        alpha *= 0.5
    if best is None:
        raise NewtonDiverged("line search failed: every trial step was inadmissible")
    return best
