"""Structured meshes of the rectangle [0, L1] x [0, L2].

Two views are produced from the same (nx, ny) subdivision:

* a P1 triangulation whose vertices carry the finite element unknowns;
* a cell-centred grid whose cells carry the finite volume unknowns.

Vertices are numbered ``i + (nx + 1) * j`` and cells ``i + nx * j``
(x index fastest).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True, eq=False)
class Mesh:
    L1: float
    L2: float
    nx: int
    ny: int
    kind: str  # "fem" or "fvm"
    vertices: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    h: float = 0.0
    # vertex indices on each side (corners belong to two sides)
    vertex_sides: dict = field(default_factory=dict)
    # boundary edges of the triangulation, per side, as vertex pairs
    edge_sides: dict = field(default_factory=dict)
    cell_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    cell_areas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # (nf, 2) adjacent cells; column 1 is -1 on boundary faces
    face_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    face_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    face_normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    face_centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    # "" for interior faces, else one of SIDES
    face_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype="<U6"))

    @property
    def dx(self) -> float:
        return self.L1 / self.nx

    @property
    def dy(self) -> float:
        return self.L2 / self.ny

    @property
    def area(self) -> float:
        return self.L1 * self.L2

    @property
    def n_dofs(self) -> int:
        return len(self.vertices) if self.kind == "fem" else len(self.cell_centers)

    @property
    def dof_points(self) -> np.ndarray:
        """Coordinates at which the unknowns live (vertices or cell centres)."""
        return self.vertices if self.kind == "fem" else self.cell_centers

    @property
    def dof_axes(self) -> tuple[np.ndarray, np.ndarray]:
        """1-D x and y coordinates of the tensor-product dof lattice."""
        if self.kind == "fem":
            return (np.linspace(0.0, self.L1, self.nx + 1),
                    np.linspace(0.0, self.L2, self.ny + 1))
        return ((np.arange(self.nx) + 0.5) * self.dx,
                (np.arange(self.ny) + 0.5) * self.dy)

    def triangle_areas(self) -> np.ndarray:
        """Signed areas, positive for counter-clockwise triangles."""
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _check_dims(L1, L2, nx, ny):
    if not (L1 > 0 and L2 > 0):
        raise ValueError(f"domain sides must be positive, got L1={L1}, L2={L2}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise ValueError(f"subdivisions must be positive integers, got nx={nx}, ny={ny}")


def build_uniform_triangulation(L1: float, L2: float, nx: int, ny: int) -> Mesh:
    """Split each grid rectangle into two triangles along its lower-left to upper-right diagonal."""
    _check_dims(L1, L2, nx, ny)
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, L1, nx + 1)
    ys = np.linspace(0.0, L2, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = i + (nx + 1) * j
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    iv = np.arange((nx + 1) * (ny + 1))
    vi, vj = iv % (nx + 1), iv // (nx + 1)
    vertex_sides = {
        "left": iv[vi == 0],
        "right": iv[vi == nx],
        "bottom": iv[vj == 0],
        "top": iv[vj == ny],
    }
    edge_sides = {s: np.column_stack([v[:-1], v[1:]]) for s, v in vertex_sides.items()}

    return Mesh(
        L1=float(L1), L2=float(L2), nx=nx, ny=ny, kind="fem",
        vertices=vertices, triangles=triangles,
        h=float(np.hypot(L1 / nx, L2 / ny)),
        vertex_sides=vertex_sides, edge_sides=edge_sides,
    )


def build_fv_grid(L1: float, L2: float, nx: int, ny: int) -> Mesh:
    """Uniform cell-centred grid with face connectivity.

    Interior face normals point from the lower-indexed to the higher-indexed
    cell; boundary face normals point outward.
    """
    _check_dims(L1, L2, nx, ny)
    nx, ny = int(nx), int(ny)
    dx, dy = L1 / nx, L2 / ny
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny))
    ci, cj = ci.ravel(), cj.ravel()
    centers = np.column_stack([(ci + 0.5) * dx, (cj + 0.5) * dy])
    areas = np.full(nx * ny, dx * dy)

    cells, lengths, normals, fcenters, tags = [], [], [], [], []

    def add(c0, c1, length, normal, center, tag):
        n = len(c0)
        cells.append(np.column_stack([c0, c1]))
        lengths.append(np.full(n, length))
        normals.append(np.tile(normal, (n, 1)))
        fcenters.append(center)
        tags.append(np.full(n, tag, dtype="<U6"))

    # vertical faces between (i, j) and (i + 1, j)
    fi, fj = np.meshgrid(np.arange(nx - 1), np.arange(ny))
    fi, fj = fi.ravel(), fj.ravel()
    add(fi + nx * fj, fi + 1 + nx * fj, dy, (1.0, 0.0),
        np.column_stack([(fi + 1) * dx, (fj + 0.5) * dy]), "")
    # horizontal faces between (i, j) and (i, j + 1)
    fi, fj = np.meshgrid(np.arange(nx), np.arange(ny - 1))
    fi, fj = fi.ravel(), fj.ravel()
    add(fi + nx * fj, fi + nx * (fj + 1), dx, (0.0, 1.0),
        np.column_stack([(fi + 0.5) * dx, (fj + 1) * dy]), "")

    jj = np.arange(ny)
    ii = np.arange(nx)
    none = lambda n: np.full(n, -1)
    add(nx * jj, none(ny), dy, (-1.0, 0.0), np.column_stack([np.zeros(ny), (jj + 0.5) * dy]), "left")
    add(nx - 1 + nx * jj, none(ny), dy, (1.0, 0.0),
        np.column_stack([np.full(ny, L1), (jj + 0.5) * dy]), "right")
    add(ii, none(nx), dx, (0.0, -1.0), np.column_stack([(ii + 0.5) * dx, np.zeros(nx)]), "bottom")
    add(ii + nx * (ny - 1), none(nx), dx, (0.0, 1.0),
        np.column_stack([(ii + 0.5) * dx, np.full(nx, L2)]), "top")

    xs = np.linspace(0.0, L1, nx + 1)
    ys = np.linspace(0.0, L2, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    return Mesh(
        L1=float(L1), L2=float(L2), nx=nx, ny=ny, kind="fvm",
        vertices=np.column_stack([X.ravel(), Y.ravel()]),
        h=float(np.hypot(dx, dy)),
        cell_centers=centers, cell_areas=areas,
        face_cells=np.concatenate(cells).astype(np.int64),
        face_lengths=np.concatenate(lengths),
        face_normals=np.concatenate(normals),
        face_centers=np.concatenate(fcenters),
        face_tags=np.concatenate(tags),
    )


def aligned_fem_for_fv(fv: Mesh) -> tuple[Mesh, np.ndarray]:
    """Triangulation on which every cell centre of ``fv`` is a vertex.

    Uses twice the cell resolution; returns the mesh and, per cell, the index
    of the coinciding vertex.
    """
    fem = build_uniform_triangulation(fv.L1, fv.L2, 2 * fv.nx, 2 * fv.ny)
    ci = np.arange(fv.nx * fv.ny)
    i, j = ci % fv.nx, ci // fv.nx
    return fem, (2 * i + 1) + (2 * fv.nx + 1) * (2 * j + 1)


def write_mesh_csv(mesh: Mesh, directory: str | Path) -> list[Path]:
    """Debug dump: vertices.csv (index,x,y) and triangles.csv (index,v0,v1,v2)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / "vertices.csv"]
    with open(paths[0], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "x", "y"])
        for k, (x, y) in enumerate(mesh.vertices):
            w.writerow([k, repr(float(x)), repr(float(y))])
    if len(mesh.triangles):
        paths.append(directory / "triangles.csv")
        with open(paths[1], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "v0", "v1", "v2"])
            for k, t in enumerate(mesh.triangles):
                w.writerow([k, *map(int, t)])
    return paths
