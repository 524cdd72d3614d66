"""Benchmark geometries, meshes, and boundary programs.

Meshes are structured grids of linear quadrilaterals/hexahedra with
tensor-product vertex ordering (first axis fastest); higher-order nodes are
created later at discretisation time.  Boundary facets are stored as
(cell, face) pairs grouped into named sets; Dirichlet data is prescribed
per displacement component and ramps proportionally with the load factor,
tractions are dead loads per unit reference area.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .elements import Regime, spatial_dim
from .errors import PlacementFailed

COOK_SPAN = 48.0
COOK_LEFT_HEIGHT = 44.0
COOK_RIGHT_TOP = 60.0
PUNCH_SIZE = 10.0


@dataclass
class Mesh:
    """Linear mesh: vertices, cells, per-cell material ids, named facet sets."""

    dim: int
    nodes: np.ndarray
    cells: np.ndarray
    material_ids: np.ndarray
    facet_sets: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]


@dataclass(frozen=True)
class DirichletSpec:
    """Fix one displacement component (or all, component=None) on a facet set.

    The prescribed value is amplitude * load_factor, so amplitude 0 is a
    hard fixity and a nonzero amplitude ramps over the load program.
    """

    set_name: str
    component: int | None
    amplitude: float = 0.0


@dataclass(frozen=True)
class TractionSpec:
    """Dead-load traction (force per unit reference area) on a facet set."""

    set_name: str
    traction: tuple


@dataclass
class BoundaryProgram:
    dirichlet: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# structured grid helpers
# ---------------------------------------------------------------------------

def _structured_cells(shape: tuple[int, ...]) -> np.ndarray:
    """Tensor-product cell connectivity for a vertex grid of `shape` cells."""
    dim = len(shape)
    nv = [s + 1 for s in shape]

    def vid(idx):
        out = 0
        for ax in reversed(range(dim)):
            out = out * nv[ax] + idx[ax]
        return out

    cells = []
    ranges = [range(s) for s in shape]
    if dim == 2:
        for j in ranges[1]:
            for i in ranges[0]:
                cells.append(
                    [vid((i, j)), vid((i + 1, j)), vid((i, j + 1)), vid((i + 1, j + 1))]
                )
    else:
        for k in ranges[2]:
            for j in ranges[1]:
                for i in ranges[0]:
                    cells.append(
                        [
                            vid((i, j, k)),
                            vid((i + 1, j, k)),
                            vid((i, j + 1, k)),
                            vid((i + 1, j + 1, k)),
                            vid((i, j, k + 1)),
                            vid((i + 1, j, k + 1)),
                            vid((i, j + 1, k + 1)),
                            vid((i + 1, j + 1, k + 1)),
                        ]
                    )
    return np.asarray(cells, dtype=int)


def _structured_nodes(shape: tuple[int, ...], mapping) -> np.ndarray:
    dim = len(shape)
    axes = [np.linspace(0.0, 1.0, s + 1) for s in shape]
    grids = np.meshgrid(*axes, indexing="ij")
    ref = np.stack([g.T.ravel() if dim == 2 else g.transpose(2, 1, 0).ravel() for g in grids], axis=-1)
    return mapping(ref)


def _cell_index(shape, idx):
    out = 0
    for ax in reversed(range(len(shape))):
        out = out * shape[ax] + idx[ax]
    return out


def _boundary_set(shape, axis: int, side: int, predicate=None) -> np.ndarray:
    """(cell, face) pairs on the grid boundary plane, optionally filtered."""
    dim = len(shape)
    face_id = 2 * axis + (1 if side > 0 else 0)
    pairs = []
    ranges = [range(s) for s in shape]
    import itertools

    for idx in itertools.product(*ranges):
        if side > 0 and idx[axis] != shape[axis] - 1:
            continue
        if side < 0 and idx[axis] != 0:
            continue
        if predicate is not None and not predicate(idx):
            continue
        pairs.append((_cell_index(shape, idx), face_id))
    return np.asarray(pairs, dtype=int)


# ---------------------------------------------------------------------------
# Cook's cantilever
# ---------------------------------------------------------------------------

def cook_mapping_2d(ref: np.ndarray) -> np.ndarray:
    """Bilinear map of the unit square onto the tapered Cook panel (mm)."""
    s, r = ref[:, 0], ref[:, 1]
    x = COOK_SPAN * s
    y = COOK_LEFT_HEIGHT * (s + r) - 28.0 * s * r
    return np.stack([x, y], axis=-1)


def cook_mesh(
    n: int,
    regime: Regime,
    t: float = 1.0,
    f: float = 1.0,
    walls: bool = False,
) -> tuple[Mesh, BoundaryProgram]:
    """Tapered cantilever: left edge clamped, upward traction f on the right edge.

    3D meshes are n x n x 1 with thickness t; the x3 faces are free unless
    ``walls`` fixes u3 on both of them.
    """
    if n < 1:
        raise ValueError("n must be a positive cell count")
    regime = Regime(regime)
    dim = spatial_dim(regime)
    if dim == 2:
        shape = (n, n)
        nodes = _structured_nodes(shape, cook_mapping_2d)
        traction = (0.0, f)
        probe_tip = (COOK_SPAN, COOK_RIGHT_TOP)
    else:
        shape = (n, n, 1)

        def mapping(ref):
            xy = cook_mapping_2d(ref[:, :2])
            return np.concatenate([xy, t * ref[:, 2:3]], axis=1)

        nodes = _structured_nodes(shape, mapping)
        traction = (0.0, f, 0.0)
        probe_tip = (COOK_SPAN, COOK_RIGHT_TOP, 0.0)
    cells = _structured_cells(shape)
    mesh = Mesh(
        dim=dim,
        nodes=nodes,
        cells=cells,
        material_ids=np.zeros(cells.shape[0], dtype=int),
        facet_sets={
            "left": _boundary_set(shape, 0, -1),
            "right": _boundary_set(shape, 0, +1),
        },
    )
    bp = BoundaryProgram(
        dirichlet=[DirichletSpec("left", None, 0.0)],
        tractions=[TractionSpec("right", traction)],
        probes={"tip": probe_tip},
    )
    if dim == 3:
        mesh.facet_sets["back"] = _boundary_set(shape, 2, -1)
        mesh.facet_sets["front"] = _boundary_set(shape, 2, +1)
        if walls:
            bp.dirichlet += [DirichletSpec("back", 2, 0.0), DirichletSpec("front", 2, 0.0)]
    return mesh, bp


# ---------------------------------------------------------------------------
# punch (inhomogeneous compression)
# ---------------------------------------------------------------------------

def punch_mesh(n: int, regime: Regime, f: float = 1.0) -> tuple[Mesh, BoundaryProgram]:
    """Half of the inhomogeneously compressed block (10 mm cube / square).

    x1 = 0 is the symmetry plane (u1 = 0); the bottom slides freely in x1
    with u2 = 0; the whole top surface is held in x1 and the half adjacent
    to the symmetry plane carries the downward traction f.  3D adds rigid
    walls in x3 on the back and front faces.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be an even cell count >= 2")
    regime = Regime(regime)
    dim = spatial_dim(regime)
    shape = (n, n) if dim == 2 else (n, n, n)
    nodes = _structured_nodes(shape, lambda ref: PUNCH_SIZE * ref)
    cells = _structured_cells(shape)
    facet_sets = {
        "symmetry": _boundary_set(shape, 0, -1),
        "outer": _boundary_set(shape, 0, +1),
        "bottom": _boundary_set(shape, 1, -1),
        "top": _boundary_set(shape, 1, +1),
        "top_loaded": _boundary_set(shape, 1, +1, predicate=lambda idx: idx[0] < n // 2),
    }
    if dim == 3:
        facet_sets["back"] = _boundary_set(shape, 2, -1)
        facet_sets["front"] = _boundary_set(shape, 2, +1)
    mesh = Mesh(
        dim=dim,
        nodes=nodes,
        cells=cells,
        material_ids=np.zeros(cells.shape[0], dtype=int),
        facet_sets=facet_sets,
    )
    traction = (0.0, -f) if dim == 2 else (0.0, -f, 0.0)
    probe = (0.0, PUNCH_SIZE) if dim == 2 else (0.0, PUNCH_SIZE, PUNCH_SIZE / 2)
    bp = BoundaryProgram(
        dirichlet=[
            DirichletSpec("bottom", 1, 0.0),
            DirichletSpec("top", 0, 0.0),
            DirichletSpec("symmetry", 0, 0.0),
        ],
        tractions=[TractionSpec("top_loaded", traction)],
        probes={"top_middle": probe},
    )
    if dim == 3:
        bp.dirichlet += [DirichletSpec("back", 2, 0.0), DirichletSpec("front", 2, 0.0)]
    return mesh, bp


# ---------------------------------------------------------------------------
# stretched composites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompositeParams:
    """Geometry controls of the random composite blocks (plane stress only)."""

    n: int = 96
    size: float = 1.0
    n_inclusions: int = 10
    volume_fraction: float = 0.25
    aspect: float | None = None  # None: circular particles; else fibre l/d
    fraction_tol: float = 0.002
    max_rejections: int = 20000

    @classmethod
    def particles(cls, n: int = 96) -> "CompositeParams":
        return cls(n=n, n_inclusions=10, volume_fraction=0.25, aspect=None, fraction_tol=0.002)

    @classmethod
    def fibres(cls, n: int = 96) -> "CompositeParams":
        return cls(n=n, n_inclusions=25, volume_fraction=0.03, aspect=10.0, fraction_tol=0.0005)


def _rect_corners(center, half_l, half_w, angle):
    c, s = np.cos(angle), np.sin(angle)
    axes = np.array([[c, s], [-s, c]])
    signs = np.array([[1, 1], [1, -1], [-1, -1], [-1, 1]], dtype=float)
    return center + signs @ np.diag([half_l, half_w]) @ axes


def _obb_overlap(c1, h1, a1, c2, h2, a2, margin):
    """Separating-axis test for two oriented rectangles inflated by margin."""
    r1 = _rect_corners(c1, h1[0] + margin, h1[1] + margin, a1)
    r2 = _rect_corners(c2, h2[0] + margin, h2[1] + margin, a2)
    for rect_a, rect_b in ((r1, r2), (r2, r1)):
        edges = rect_a - np.roll(rect_a, 1, axis=0)
        for e in edges[:2]:
            axis = np.array([-e[1], e[0]])
            pa = rect_a @ axis
            pb = rect_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _centroid_fraction_particles(centroids, centers, radii, scale):
    inside = np.zeros(centroids.shape[0], dtype=bool)
    for c, r in zip(centers, radii):
        inside |= np.sum((centroids - c) ** 2, axis=1) <= (scale * r) ** 2
    return inside


def _centroid_fraction_fibres(centroids, centers, half_dims, angles, scale):
    inside = np.zeros(centroids.shape[0], dtype=bool)
    for c, h, a in zip(centers, half_dims, angles):
        rel = centroids - c
        ca, sa = np.cos(a), np.sin(a)
        lx = rel[:, 0] * ca + rel[:, 1] * sa
        ly = -rel[:, 0] * sa + rel[:, 1] * ca
        inside |= (np.abs(lx) <= scale * h[0]) & (np.abs(ly) <= scale * h[1])
    return inside


def composite_mesh(
    kind: str,
    seed: int,
    params: CompositeParams | None = None,
) -> tuple[Mesh, BoundaryProgram]:
    """Square block with randomly placed stiff inclusions, stretched to twice
    its length by a ramped Dirichlet program on the right edge.

    ``kind`` is "particles" (circles) or "fibres" (rotated rectangles).
    Placement is rejection sampling with a one-element margin; the inclusion
    size is then rescaled (bisection on a common scale factor) until the
    element-centroid volume fraction hits the target within fraction_tol.
    Fully deterministic for a fixed seed.
    """
    if kind not in ("particles", "fibres"):
        raise ValueError(f"unknown composite kind {kind!r}")
    if params is None:
        params = CompositeParams.particles() if kind == "particles" else CompositeParams.fibres()
    n, size = params.n, params.size
    h = size / n
    rng = np.random.default_rng(seed)
    scale_hi = 1.12
    margin = h

    area_each = params.volume_fraction * size**2 / params.n_inclusions
    centers = []
    if kind == "particles":
        radius = np.sqrt(area_each / np.pi)
        lim = radius * scale_hi + margin
        rejections = 0
        while len(centers) < params.n_inclusions:
            cand = rng.uniform(lim, size - lim, 2)
            ok = all(
                np.linalg.norm(cand - c) > 2 * radius * scale_hi + margin for c in centers
            )
            if ok:
                centers.append(cand)
            else:
                rejections += 1
                if rejections > params.max_rejections:
                    raise PlacementFailed(
                        f"could not place {params.n_inclusions} particles after "
                        f"{rejections} rejections (seed {seed})"
                    )
        centers = np.asarray(centers)
        radii = np.full(params.n_inclusions, radius)
        frac_of = lambda cent, s: _centroid_fraction_particles(cent, centers, radii, s)
    else:
        length = np.sqrt(area_each * params.aspect)
        width = length / params.aspect
        half = np.array([length / 2, width / 2])
        lim = (length / 2) * scale_hi + margin
        angles = []
        rejections = 0
        while len(centers) < params.n_inclusions:
            cand = rng.uniform(lim, size - lim, 2)
            ang = rng.uniform(0.0, np.pi)
            ok = all(
                not _obb_overlap(cand, half * scale_hi, ang, c, half * scale_hi, a, margin)
                for c, a in zip(centers, angles)
            )
            if ok:
                centers.append(cand)
                angles.append(ang)
            else:
                rejections += 1
                if rejections > params.max_rejections:
                    raise PlacementFailed(
                        f"could not place {params.n_inclusions} fibres after "
                        f"{rejections} rejections (seed {seed})"
                    )
        centers = np.asarray(centers)
        angles = np.asarray(angles)
        half_dims = np.tile(half, (params.n_inclusions, 1))
        frac_of = lambda cent, s: _centroid_fraction_fibres(cent, centers, half_dims, angles, s)

    shape = (n, n)
    nodes = _structured_nodes(shape, lambda ref: size * ref)
    cells = _structured_cells(shape)
    centroids = nodes[cells].mean(axis=1)

    # calibrate the common size scale so the discrete fraction hits the target
    target = params.volume_fraction
    lo, hi = 0.9, scale_hi
    best_scale, best_err = 1.0, np.inf
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        frac = frac_of(centroids, mid).mean()
        err = abs(frac - target)
        if err < best_err:
            best_scale, best_err = mid, err
        if err <= params.fraction_tol / 4:
            break
        if frac < target:
            lo = mid
        else:
            hi = mid
    inside = frac_of(centroids, best_scale)
    if abs(inside.mean() - target) > params.fraction_tol:
        raise PlacementFailed(
            f"volume-fraction calibration missed the target: got {inside.mean():.4f}, "
            f"want {target} +/- {params.fraction_tol} (seed {seed}, n {n})"
        )

    mesh = Mesh(
        dim=2,
        nodes=nodes,
        cells=cells,
        material_ids=inside.astype(int),
        facet_sets={
            "left": _boundary_set(shape, 0, -1),
            "right": _boundary_set(shape, 0, +1),
        },
    )
    bp = BoundaryProgram(
        dirichlet=[
            DirichletSpec("left", None, 0.0),
            DirichletSpec("right", 0, size),
            DirichletSpec("right", 1, 0.0),
        ],
        tractions=[],
        probes={
            "mid_top": (size / 2, size),
            "mid_bottom": (size / 2, 0.0),
            "right_top": (size, size),
        },
    )
    return mesh, bp


# ---------------------------------------------------------------------------
# plain-text mesh interchange format
# ---------------------------------------------------------------------------

def save_mesh(mesh: Mesh, path) -> None:
    """Write the documented plain-text mesh format (see README)."""
    with open(path, "w") as fh:
        fh.write("hyperfem-mesh 1\n")
        fh.write(f"dim {mesh.dim}\n")
        fh.write(f"nodes {mesh.nodes.shape[0]}\n")
        for row in mesh.nodes:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write(f"cells {mesh.cells.shape[0]} {mesh.cells.shape[1]}\n")
        for row in mesh.cells:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
        fh.write("materials\n")
        for mid in mesh.material_ids:
            fh.write(f"{int(mid)}\n")
        for name, pairs in mesh.facet_sets.items():
            fh.write(f"facetset {name} {pairs.shape[0]}\n")
            for cell, face in pairs:
                fh.write(f"{int(cell)} {int(face)}\n")
        fh.write("end\n")


def load_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    it = iter(lines)
    header = next(it)
    if not header.startswith("hyperfem-mesh"):
        raise ValueError(f"not a hyperfem mesh file: {header!r}")
    dim = int(next(it).split()[1])
    n_nodes = int(next(it).split()[1])
    nodes = np.array([[float(v) for v in next(it).split()] for _ in range(n_nodes)])
    ncell_line = next(it).split()
    n_cells, npc = int(ncell_line[1]), int(ncell_line[2])
    cells = np.array([[int(v) for v in next(it).split()] for _ in range(n_cells)], dtype=int)
    tok = next(it)
    if tok != "materials":
        raise ValueError("expected materials section")
    mats = np.array([int(next(it)) for _ in range(n_cells)], dtype=int)
    facet_sets = {}
    for tok in it:
        if tok == "end":
            break
        parts = tok.split()
        if parts[0] != "facetset":
            raise ValueError(f"unexpected section {tok!r}")
        name, count = parts[1], int(parts[2])
        pairs = np.array([[int(v) for v in next(it).split()] for _ in range(count)], dtype=int)
        facet_sets[name] = pairs.reshape(count, 2)
    return Mesh(dim=dim, nodes=nodes, cells=cells, material_ids=mats, facet_sets=facet_sets)
