"""Derived fields, probes, and file emission.

Stress output follows the chain sigma = F S F^T / J on whatever embedded
(F, S) pair the kernels produced per regime; contour-style quantities are
volume-weighted element averages of the quadrature-point values.  Files are
legacy ASCII VTK (unstructured grid) plus fixed-schema CSV tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elements import Regime, stress_dimension
from .errors import InvertedElement


def cauchy_from_state(f: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Cauchy stress sigma = F S F^T / det F (batched)."""
    f = np.asarray(f, dtype=float)
    j = np.linalg.det(f)
    if np.any(j <= 0.0):
        raise InvertedElement("det F <= 0 in Cauchy transform")
    tau = f @ s @ np.swapaxes(f, -1, -2)
    return tau / j[..., None, None]


def von_mises(sigma: np.ndarray, d: int) -> np.ndarray:
    """Effective stress sqrt(3/2 s_dev : s_dev), deviator taken with 1/d."""
    sigma = np.asarray(sigma, dtype=float)
    tr = np.trace(sigma, axis1=-2, axis2=-1)
    dev = sigma - (tr / d)[..., None, None] * np.eye(sigma.shape[-1])
    return np.sqrt(1.5 * np.einsum("...ij,...ij->...", dev, dev))


def element_average(qp_values: np.ndarray, qp_weights: np.ndarray) -> np.ndarray:
    """Volume-weighted mean over each element's quadrature points.

    qp_values (ne, nq, ...) with weights (ne, nq) > 0.
    """
    w = np.asarray(qp_weights, dtype=float)
    if np.any(w <= 0.0):
        raise ValueError("quadrature weights must be positive")
    extra = qp_values.ndim - 2
    wx = w.reshape(w.shape + (1,) * extra)
    return (qp_values * wx).sum(axis=1) / wx.sum(axis=1)


@dataclass
class FieldSnapshot:
    """Converged per-load-step fields."""

    load_factor: float
    u: np.ndarray                       # (n_nodes, ncomp)
    sigma: np.ndarray                   # per-element averaged Cauchy stress
    sigma_eff: np.ndarray               # per-element von Mises
    ptilde: np.ndarray | None = None    # element-mean mixed pressure
    jtilde: np.ndarray | None = None    # element-mean mixed dilatation
    probes: dict = field(default_factory=dict)


def build_snapshot(regime: Regime, load_factor: float, u_nodal, fields, n_elems: int):
    """Element-averaged Cauchy stress/von Mises from assembled qp fields."""
    d = stress_dimension(regime)
    dim_s = 2 if Regime(regime) is Regime.FLATLAND else 3
    sigma = np.zeros((n_elems, dim_s, dim_s))
    sigma_eff = np.zeros(n_elems)
    for g in fields:
        sig_qp = cauchy_from_state(g["F"], g["S"])
        sigma[g["elem_ids"]] = element_average(sig_qp, g["detjw"])
        sigma_eff[g["elem_ids"]] = von_mises(sigma[g["elem_ids"]], d)
    return FieldSnapshot(load_factor=load_factor, u=u_nodal.copy(), sigma=sigma, sigma_eff=sigma_eff)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

def probe_node(nodes: np.ndarray, point, tol_rel: float = 1e-9) -> int:
    """Nearest node with an exact-match assertion (probes are nodal)."""
    point = np.asarray(point, dtype=float)
    d2 = np.sum((nodes - point) ** 2, axis=1)
    idx = int(np.argmin(d2))
    scale = max(float(np.abs(nodes).max()), 1.0)
    if np.sqrt(d2[idx]) > tol_rel * scale:
        raise KeyError(f"no mesh node at probe point {point.tolist()} (nearest is {nodes[idx]})")
    return idx


def probe_history(nodes: np.ndarray, probes: dict, snapshots) -> list[dict]:
    """Rows of the probe table: one per (step, probe)."""
    ids = {name: probe_node(nodes, pt) for name, pt in probes.items()}
    rows = []
    for step, snap in enumerate(snapshots, start=1):
        for name, nid in ids.items():
            rows.append(
                dict(step=step, load=snap.load_factor, probe=name, u=snap.u[nid].copy())
            )
    return rows


def write_probe_csv(path, rows, ncomp: int) -> None:
    """Fixed schema: step,load,probe,u1,u2[,u3]."""
    header = "step,load,probe," + ",".join(f"u{k + 1}" for k in range(ncomp))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            comps = ",".join(f"{v:.12g}" for v in row["u"])
            fh.write(f"{row['step']},{row['load']:.12g},{row['probe']},{comps}\n")


def write_convergence_csv(path, log) -> None:
    """Schema: step,iter,residual_norm."""
    with open(path, "w") as fh:
        fh.write("step,iter,residual_norm\n")
        for step in log.steps:
            for it, rn in enumerate(step.residuals):
                fh.write(f"{step.step},{it},{rn:.12g}\n")


# ---------------------------------------------------------------------------
# legacy VTK emission
# ---------------------------------------------------------------------------

def _subcells(dmesh):
    """Split order-p elements into linear sub-cells for VTK output."""
    order, dim = dmesh.order, dmesh.dim
    nn1 = order + 1

    def lid(idx):
        out = 0
        for ax in reversed(range(dim)):
            out = out * nn1 + idx[ax]
        return out

    locs = []
    if dim == 2:
        for j in range(order):
            for i in range(order):
                locs.append([lid((i, j)), lid((i + 1, j)), lid((i + 1, j + 1)), lid((i, j + 1))])
    else:
        for k in range(order):
            for j in range(order):
                for i in range(order):
                    locs.append(
                        [
                            lid((i, j, k)),
                            lid((i + 1, j, k)),
                            lid((i + 1, j + 1, k)),
                            lid((i, j + 1, k)),
                            lid((i, j, k + 1)),
                            lid((i + 1, j, k + 1)),
                            lid((i + 1, j + 1, k + 1)),
                            lid((i, j + 1, k + 1)),
                        ]
                    )
    locs = np.asarray(locs, dtype=int)
    cells = dmesh.elems[:, locs].reshape(-1, locs.shape[1])
    parents = np.repeat(np.arange(dmesh.n_elems), locs.shape[0])
    return cells, parents


def write_vtk(path, dmesh, snapshot: FieldSnapshot, material_ids=None) -> None:
    """Legacy VTK 2.0 ASCII unstructured grid with nodal displacements and
    per-cell stress tensor / von Mises (higher-order cells are written as
    their linear sub-cell decomposition)."""
    cells, parents = _subcells(dmesh)
    npts = dmesh.n_nodes
    pts3 = np.zeros((npts, 3))
    pts3[:, : dmesh.dim] = dmesh.nodes
    u3 = np.zeros((npts, 3))
    u3[:, : snapshot.u.shape[1]] = snapshot.u
    vtk_type = 9 if dmesh.dim == 2 else 12
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write("hyperfem snapshot\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {npts} double\n")
        for p in pts3:
            fh.write(f"{p[0]:.12g} {p[1]:.12g} {p[2]:.12g}\n")
        npc = cells.shape[1]
        fh.write(f"CELLS {cells.shape[0]} {cells.shape[0] * (npc + 1)}\n")
        for c in cells:
            fh.write(f"{npc} " + " ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"CELL_TYPES {cells.shape[0]}\n")
        for _ in range(cells.shape[0]):
            fh.write(f"{vtk_type}\n")
        fh.write(f"POINT_DATA {npts}\n")
        fh.write("VECTORS displacement double\n")
        for v in u3:
            fh.write(f"{v[0]:.12g} {v[1]:.12g} {v[2]:.12g}\n")
        fh.write(f"CELL_DATA {cells.shape[0]}\n")
        fh.write("TENSORS cauchy_stress double\n")
        for parent in parents:
            s3 = np.zeros((3, 3))
            s = snapshot.sigma[parent]
            s3[: s.shape[0], : s.shape[1]] = s
            for row in s3:
                fh.write(f"{row[0]:.12g} {row[1]:.12g} {row[2]:.12g}\n")
            fh.write("\n")
        fh.write("SCALARS von_mises double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for parent in parents:
            fh.write(f"{snapshot.sigma_eff[parent]:.12g}\n")
        if material_ids is not None:
            fh.write("SCALARS material_id int 1\n")
            fh.write("LOOKUP_TABLE default\n")
            for parent in parents:
                fh.write(f"{int(material_ids[parent])}\n")


def read_vtk_points_cells(path):
    """Minimal reader for round-trip checks: returns (points, cells)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    points = cells = None
    while i < len(lines):
        parts = lines[i].split()
        if parts[:1] == ["POINTS"]:
            n = int(parts[1])
            points = np.array([[float(v) for v in lines[i + 1 + k].split()] for k in range(n)])
            i += n
        elif parts[:1] == ["CELLS"]:
            n = int(parts[1])
            cells = np.array(
                [[int(v) for v in lines[i + 1 + k].split()[1:]] for k in range(n)], dtype=int
            )
            i += n
        i += 1
    return points, cells
