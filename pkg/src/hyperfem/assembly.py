"""Global discretisation and assembly.

``discretize`` upgrades a linear mesh to order-p connectivity (p in {1, 2})
by inserting shared edge/face/cell nodes through the multilinear geometry
map.  ``Problem`` couples a discretised mesh with regime, formulation,
materials and the boundary program; ``Assembler`` precomputes geometry and
load vectors once and then produces (R, K) pairs per Newton iterate.

Displacement dofs are continuous and node-based (dof = node * ncomp + comp);
the mixed pressure/dilatation dofs of the three-field formulation are
element-local discontinuous monomials of degree p-1, appended after all
displacement dofs, assembled monolithically (no static condensation).
Dirichlet constraints are handled by symmetric elimination: constrained
values are written into the state ahead of each load step so K stays
symmetric and reduced rows drop out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .errors import ConstraintConflict, DimensionMismatch, UnsupportedModel, UnsupportedRegime
from .materials import Material
from .plane_stress import CondensationSettings
from .scenarios import BoundaryProgram, Mesh


@dataclass
class FacetSet:
    cells: np.ndarray
    faces: np.ndarray
    nodes: np.ndarray  # global node ids per facet, (nf, nodes_per_face)


@dataclass
class DiscreteMesh:
    dim: int
    order: int
    nodes: np.ndarray
    elems: np.ndarray
    material_ids: np.ndarray
    facet_sets: dict[str, FacetSet]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elems(self) -> int:
        return self.elems.shape[0]


def discretize(mesh: Mesh, order: int) -> DiscreteMesh:
    """Insert shared order-p nodes on a linear quad/hex mesh (p in {1, 2})."""
    if order not in (1, 2):
        raise ValueError(f"unsupported element order {order}")
    dim = mesh.dim
    nn1 = order + 1
    nn = nn1**dim
    n_verts = mesh.nodes.shape[0]

    if order == 1:
        elems = mesh.cells.copy()
        nodes = mesh.nodes.copy()
    else:
        idx = np.arange(nn)
        digits = np.stack([(idx // nn1**ax) % nn1 for ax in range(dim)], axis=1)
        ref_pts = 2.0 * digits / order - 1.0
        nvals, _ = el.shape_functions(dim, 1, ref_pts)  # multilinear geometry map

        # corner grid-position -> local vertex index of the linear cell
        corner_local = {}
        for local, dg in enumerate(digits):
            if np.all((dg == 0) | (dg == order)):
                key = tuple(int(v // order) for v in dg)
                corner_local[key] = local

        extra: dict[frozenset, int] = {}
        coords_extra: list[np.ndarray] = []
        elems = np.empty((mesh.n_cells, nn), dtype=int)
        for e, cell in enumerate(mesh.cells):
            cell_coords = mesh.nodes[cell]
            for local, dg in enumerate(digits):
                pinned = (dg == 0) | (dg == order)
                if np.all(pinned):
                    key = tuple(int(v // order) for v in dg)
                    vloc = 0
                    for ax in range(dim):
                        vloc += key[ax] * (2**ax)
                    elems[e, local] = cell[vloc]
                    continue
                # entity corners: pinned axes keep their side, free axes take both
                corner_ids = []
                free_axes = [ax for ax in range(dim) if not pinned[ax]]
                for m in range(2 ** len(free_axes)):
                    key = [int(dg[ax] // order) for ax in range(dim)]
                    for kk, ax in enumerate(free_axes):
                        key[ax] = (m >> kk) & 1
                    vloc = sum(key[ax] * (2**ax) for ax in range(dim))
                    corner_ids.append(int(cell[vloc]))
                ent = frozenset(corner_ids)
                gid = extra.get(ent)
                if gid is None:
                    gid = n_verts + len(coords_extra)
                    extra[ent] = gid
                    coords_extra.append(nvals[local] @ cell_coords)
                elems[e, local] = gid
        nodes = np.vstack([mesh.nodes, np.asarray(coords_extra)]) if coords_extra else mesh.nodes.copy()

    facet_sets = {}
    for name, pairs in mesh.facet_sets.items():
        pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
        fnodes = np.empty((pairs.shape[0], nn1 ** (dim - 1)), dtype=int)
        for k, (cell, face_id) in enumerate(pairs):
            fnodes[k] = elems[cell, el.face_local_nodes(dim, order, face_id)]
        facet_sets[name] = FacetSet(cells=pairs[:, 0], faces=pairs[:, 1], nodes=fnodes)

    return DiscreteMesh(
        dim=dim,
        order=order,
        nodes=nodes,
        elems=elems,
        material_ids=mesh.material_ids.copy(),
        facet_sets=facet_sets,
    )


@dataclass
class DofLayout:
    """Global dof bookkeeping: [u dofs | p~ blocks | J~ blocks]."""

    n_nodes: int
    ncomp: int
    n_elems: int
    nbp: int
    nbj: int

    @property
    def n_u(self) -> int:
        return self.n_nodes * self.ncomp

    @property
    def p_offset(self) -> int:
        return self.n_u

    @property
    def j_offset(self) -> int:
        return self.n_u + self.n_elems * self.nbp

    @property
    def n_total(self) -> int:
        return self.n_u + self.n_elems * (self.nbp + self.nbj)

    def u_dofs(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes)
        return (nodes[..., None] * self.ncomp + np.arange(self.ncomp)).reshape(
            nodes.shape[:-1] + (-1,)
        )

    def p_dofs(self, elems: np.ndarray) -> np.ndarray:
        return self.p_offset + np.asarray(elems)[..., None] * self.nbp + np.arange(self.nbp)

    def j_dofs(self, elems: np.ndarray) -> np.ndarray:
        return self.j_offset + np.asarray(elems)[..., None] * self.nbj + np.arange(self.nbj)


@dataclass
class Problem:
    """Everything the solver consumes: discretised mesh, regime/formulation,
    materials keyed by the mesh material ids, and the boundary program."""

    dmesh: DiscreteMesh
    regime: el.Regime
    formulation: el.Formulation
    materials: dict[int, Material]
    boundary: BoundaryProgram
    name: str = "problem"

    def __post_init__(self):
        self.regime = el.Regime(self.regime)
        self.formulation = el.Formulation(self.formulation)
        if self.regime is el.Regime.PLANE_STRESS and self.formulation is not el.Formulation.ONE_FIELD:
            raise UnsupportedRegime("plane stress requires the one-field formulation")
        want_dim = el.material_dim(self.regime)
        for mid, model in self.materials.items():
            if model.dim != want_dim:
                raise DimensionMismatch(
                    f"material {mid} ({model.kind}) is {model.dim}D but regime "
                    f"{self.regime.value} needs {want_dim}D constitutive models"
                )
            if self.formulation is el.Formulation.THREE_FIELD and not model.has_split:
                raise UnsupportedModel(
                    f"material {mid} ({model.kind}) lacks the isochoric/volumetric "
                    "split required by the three-field formulation"
                )
        missing = set(np.unique(self.dmesh.material_ids)) - set(self.materials)
        if missing:
            raise KeyError(f"mesh references material ids without definitions: {sorted(missing)}")

    @property
    def ncomp(self) -> int:
        return el.spatial_dim(self.regime)

    def layout(self) -> DofLayout:
        if self.formulation is el.Formulation.THREE_FIELD:
            deg = self.dmesh.order - 1
            nb = el.n_monomials(self.dmesh.dim, deg)
            return DofLayout(self.dmesh.n_nodes, self.ncomp, self.dmesh.n_elems, nb, nb)
        return DofLayout(self.dmesh.n_nodes, self.ncomp, self.dmesh.n_elems, 0, 0)


@dataclass
class AssembleResult:
    R: np.ndarray  # internal residual -f_int; external loads added by the solver
    K: sp.csr_matrix
    c33: dict | None
    max_inner_iters: int
    max_abs_s33: float
    fields: list  # (elem_ids, F, S, detjw) per material group


class Assembler:
    """Precomputed geometry + scatter maps for one problem."""

    def __init__(self, problem: Problem, condensation: CondensationSettings | None = None):
        self.problem = problem
        self.condensation = condensation or CondensationSettings()
        dm = problem.dmesh
        self.layout = problem.layout()
        self.nq1 = dm.order + 1
        self.qpts, self.qwts = el.gauss_rule(dm.dim, self.nq1)
        self.nvals, self.dn_ref = el.shape_functions(dm.dim, dm.order, self.qpts)
        deg = dm.order - 1
        self.np_basis = el.monomial_basis(dm.dim, deg, self.qpts)
        self.nj_basis = self.np_basis

        self.groups = []
        for mid in sorted(problem.materials):
            elem_ids = np.nonzero(dm.material_ids == mid)[0]
            if elem_ids.size == 0:
                continue
            coords = dm.nodes[dm.elems[elem_ids]]
            detjw, dn_phys = el.geometry_factors(coords, self.dn_ref, self.qwts)
            edofs = self.layout.u_dofs(dm.elems[elem_ids])
            if problem.formulation is el.Formulation.THREE_FIELD:
                edofs = np.concatenate(
                    [edofs, self.layout.p_dofs(elem_ids), self.layout.j_dofs(elem_ids)], axis=1
                )
            self.groups.append(
                dict(mid=mid, elem_ids=elem_ids, detjw=detjw, dn_phys=dn_phys, edofs=edofs)
            )

        self.f_ext = self._external_load()
        self.dirichlet_dofs, self.dirichlet_amps = self._dirichlet_table()
        self.free = np.ones(self.layout.n_total, dtype=bool)
        self.free[self.dirichlet_dofs] = False

    # -- boundary data ------------------------------------------------------

    def _dirichlet_table(self):
        dm = self.problem.dmesh
        ncomp = self.layout.ncomp
        values: dict[int, float] = {}
        for spec in self.problem.boundary.dirichlet:
            fs = dm.facet_sets.get(spec.set_name)
            if fs is None:
                raise KeyError(f"unknown facet set {spec.set_name!r} in Dirichlet spec")
            nodes = np.unique(fs.nodes)
            comps = range(ncomp) if spec.component is None else [spec.component]
            for comp in comps:
                if comp >= ncomp:
                    raise ConstraintConflict(
                        f"Dirichlet component {comp} out of range for {ncomp}D displacement"
                    )
                for node in nodes:
                    dof = int(node) * ncomp + comp
                    prev = values.get(dof)
                    if prev is not None and prev != spec.amplitude:
                        raise ConstraintConflict(
                            f"dof {dof} (node {node}, comp {comp}) prescribed twice: "
                            f"{prev} vs {spec.amplitude}"
                        )
                    values[dof] = spec.amplitude
        if not values:
            return np.empty(0, dtype=int), np.empty(0)
        dofs = np.fromiter(values.keys(), dtype=int)
        order = np.argsort(dofs)
        amps = np.fromiter(values.values(), dtype=float)
        return dofs[order], amps[order]

    def _external_load(self) -> np.ndarray:
        """Unit dead-load vector from the traction program (scaled by the
        load factor at solve time)."""
        dm = self.problem.dmesh
        ncomp = self.layout.ncomp
        f = np.zeros(self.layout.n_total)
        fq, fw = el.gauss_rule(dm.dim - 1, self.nq1) if dm.dim > 1 else (None, None)
        for spec in self.problem.boundary.tractions:
            fs = dm.facet_sets.get(spec.set_name)
            if fs is None:
                raise KeyError(f"unknown facet set {spec.set_name!r} in traction spec")
            tvec = np.asarray(spec.traction, dtype=float)
            if tvec.shape != (ncomp,):
                raise DimensionMismatch(
                    f"traction on {spec.set_name!r} has {tvec.shape[0]} components, need {ncomp}"
                )
            for face_id in np.unique(fs.faces):
                sel = fs.faces == face_id
                cells = fs.cells[sel]
                vol_pts = el.embed_face_points(dm.dim, int(face_id), fq)
                nvals, dn = el.shape_functions(dm.dim, dm.order, vol_pts)
                coords = dm.nodes[dm.elems[cells]]
                axis = el.faces(dm.dim)[int(face_id)][0]
                free_axes = [ax for ax in range(dm.dim) if ax != axis]
                tangents = np.einsum("enc,qnd->eqcd", coords, dn[:, :, free_axes])
                if dm.dim == 2:
                    darea = np.linalg.norm(tangents[..., 0], axis=-1)
                else:
                    cross = np.cross(tangents[..., 0], tangents[..., 1])
                    darea = np.linalg.norm(cross, axis=-1)
                fe = np.einsum("q,qn,eq,a->ena", fw, nvals, darea, tvec)
                udofs = self.layout.u_dofs(dm.elems[cells]).reshape(len(cells), -1)
                np.add.at(f, udofs.ravel(), fe.reshape(len(cells), -1).ravel())
        return f

    def facet_area(self, set_name: str) -> float:
        """Total reference area of a facet set (test/diagnostic helper)."""
        dm = self.problem.dmesh
        fq, fw = el.gauss_rule(dm.dim - 1, self.nq1)
        fs = dm.facet_sets[set_name]
        total = 0.0
        for face_id in np.unique(fs.faces):
            sel = fs.faces == face_id
            cells = fs.cells[sel]
            vol_pts = el.embed_face_points(dm.dim, int(face_id), fq)
            _, dn = el.shape_functions(dm.dim, dm.order, vol_pts)
            coords = dm.nodes[dm.elems[cells]]
            axis = el.faces(dm.dim)[int(face_id)][0]
            free_axes = [ax for ax in range(dm.dim) if ax != axis]
            tangents = np.einsum("enc,qnd->eqcd", coords, dn[:, :, free_axes])
            if dm.dim == 2:
                darea = np.linalg.norm(tangents[..., 0], axis=-1)
            else:
                darea = np.linalg.norm(np.cross(tangents[..., 0], tangents[..., 1]), axis=-1)
            total += float(np.einsum("q,eq->", fw, darea))
        return total

    # -- state helpers ------------------------------------------------------

    def initial_state(self) -> np.ndarray:
        """Zero displacement.  The mixed dilatation dofs store J~ - 1 (see
        the three-field kernel), so the reference state J~ = 1 is all zeros."""
        return np.zeros(self.layout.n_total)

    def initial_c33(self) -> dict | None:
        if self.problem.regime is not el.Regime.PLANE_STRESS:
            return None
        nq = self.qwts.size
        return {g["mid"]: np.ones((g["elem_ids"].size, nq)) for g in self.groups}

    def apply_dirichlet(self, u: np.ndarray, load_factor: float) -> None:
        u[self.dirichlet_dofs] = load_factor * self.dirichlet_amps

    # -- assembly -----------------------------------------------------------

    def assemble(self, u: np.ndarray, c33_state: dict | None = None) -> AssembleResult:
        problem = self.problem
        lay = self.layout
        dm = problem.dmesh
        rows, cols, vals = [], [], []
        r_global = np.zeros(lay.n_total)
        fields = []
        c33_new = {} if problem.regime is el.Regime.PLANE_STRESS else None
        max_inner = 0
        max_s33 = 0.0
        u_nodal = u[: lay.n_u].reshape(lay.n_nodes, lay.ncomp)
        for g in self.groups:
            model = problem.materials[g["mid"]]
            u_e = u_nodal[dm.elems[g["elem_ids"]]]
            if problem.formulation is el.Formulation.ONE_FIELD:
                init = None if c33_state is None else c33_state.get(g["mid"])
                r_e, k_e, state = el.onefield_element_matrices(
                    problem.regime,
                    model,
                    g["dn_phys"],
                    g["detjw"],
                    u_e,
                    c33_init=init,
                    settings=self.condensation,
                )
                if c33_new is not None:
                    c33_new[g["mid"]] = state["c33"]
                    max_inner = max(max_inner, state["inner_iters"])
                    max_s33 = max(max_s33, state["abs_s33"])
            else:
                p_e = u[lay.p_dofs(g["elem_ids"])]
                j_e = u[lay.j_dofs(g["elem_ids"])]
                r_e, k_e, state = el.threefield_element_matrices(
                    problem.regime,
                    model,
                    g["dn_phys"],
                    g["detjw"],
                    u_e,
                    p_e,
                    j_e,
                    self.np_basis,
                    self.nj_basis,
                )
            edofs = g["edofs"]
            np.add.at(r_global, edofs.ravel(), r_e.ravel())
            ndof_e = edofs.shape[1]
            rows.append(np.repeat(edofs, ndof_e, axis=1).ravel())
            cols.append(np.tile(edofs, (1, ndof_e)).ravel())
            vals.append(k_e.ravel())
            fields.append(
                dict(
                    mid=g["mid"],
                    elem_ids=g["elem_ids"],
                    F=state["F_out"],
                    S=state["S_out"],
                    detjw=g["detjw"],
                )
            )
        k = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(lay.n_total, lay.n_total),
        ).tocsr()
        return AssembleResult(
            R=r_global,
            K=k,
            c33=c33_new,
            max_inner_iters=max_inner,
            max_abs_s33=max_s33,
            fields=fields,
        )
