"""
Adaptive quadtree mesh of axis-aligned rectangular cells.

Leaf cells are addressed as ``(level, i, j)``. Node positions are stored as
integers on the grid of the finest admissible level, so geometric tests never
depend on floating point comparisons.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy import sparse

from modules.mesh.reference_element import CORNER_OFFSETS, shape_functions

logger = logging.getLogger("QuadMesh")

Cell = Tuple[int, int, int]

SIDES = ('left', 'right', 'bottom', 'top')
NEIGHBOR_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class MeshError(Exception):
    """Raised for invalid mesh construction or mesh operations."""


@dataclass(frozen=True)
class BoundarySegment:
    """A piece of one side of the domain, given by its extent along that side."""

    side: str
    start: float
    end: float

    def __post_init__(self):
        if self.side not in SIDES:
            raise MeshError(f"Invalid boundary side: {self.side}")
        if not self.end > self.start:
            raise MeshError(f"Empty boundary segment on {self.side}: [{self.start}, {self.end}]")

    def contains(self, s):
        return (s >= self.start) & (s <= self.end)

    def overlaps(self, other):
        """True if both segments share a piece of positive length."""
        if self.side != other.side:
            return False
        return min(self.end, other.end) - max(self.start, other.start) > 1e-12

    def snapped(self, domain, level):
        """Move the end points onto the cell edges of a uniform mesh of the given level."""
        x0, y0, x1, y1 = domain
        origin, length = (y0, y1 - y0) if self.side in ('left', 'right') else (x0, x1 - x0)
        h = length / 2 ** level
        a = int(round((self.start - origin) / h))
        b = int(round((self.end - origin) / h))
        a = min(max(a, 0), 2 ** level - 1)
        b = min(max(b, a + 1), 2 ** level)
        return BoundarySegment(self.side, origin + a * h, origin + b * h)


@dataclass(frozen=True)
class Rectangle:
    """Closed axis-aligned rectangle, used for phase-pinned strips."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y, tol=1e-12):
        return ((x >= self.x0 - tol) & (x <= self.x1 + tol)
                & (y >= self.y0 - tol) & (y <= self.y1 + tol))


class QuadMesh:
    """Leaf cells of a 2:1 balanced quadtree over a rectangular domain.

    Unknowns live on conforming nodes only; a hanging node takes the average
    of the two end points of the coarse edge it sits on. ``prolongation`` maps
    conforming values to values at every node.
    """

    def __init__(self, cells: Iterable[Cell], max_level: int = 8,
                 domain=(0.0, 0.0, 1.0, 1.0),
                 dirichlet: Sequence[BoundarySegment] = (),
                 neumann: Sequence[BoundarySegment] = ()):
        self.domain = tuple(float(v) for v in domain)
        self.max_level = int(max_level)
        self.cells: Tuple[Cell, ...] = tuple(sorted(set((int(l), int(i), int(j)) for l, i, j in cells)))
        self.dirichlet = tuple(dirichlet)
        self.neumann = tuple(neumann)

        if not self.cells:
            raise MeshError("A mesh needs at least one cell")
        if any(c[0] > self.max_level or c[0] < 0 for c in self.cells):
            raise MeshError("max depth exceeded")
        for d in self.dirichlet:
            for n in self.neumann:
                if d.overlaps(n):
                    raise MeshError(f"Dirichlet and Neumann boundaries overlap on {d.side}")

        self.cell_index: Dict[Cell, int] = {c: k for k, c in enumerate(self.cells)}
        self._build()

    @classmethod
    def uniform(cls, level=5, max_level=8, domain=(0.0, 0.0, 1.0, 1.0),
                dirichlet: Sequence[BoundarySegment] = (),
                neumann: Sequence[BoundarySegment] = ()):
        """Uniform mesh of 2^level x 2^level cells; boundary segments snap to its edges."""
        if level > max_level:
            raise MeshError("max depth exceeded")
        n = 2 ** level
        cells = [(level, i, j) for i in range(n) for j in range(n)]
        return cls(cells, max_level, domain,
                   [s.snapped(domain, level) for s in dirichlet],
                   [s.snapped(domain, level) for s in neumann])

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    def _build(self):
        L = self.max_level
        n_fine = 2 ** L
        x0, y0, x1, y1 = self.domain

        arr = np.array(self.cells, dtype=np.int64)
        self.cell_levels = arr[:, 0]
        self.cell_span = 2 ** (L - self.cell_levels)
        self.cell_origin = arr[:, 1:3] * self.cell_span[:, None]

        corners = self.cell_origin[:, None, :] + CORNER_OFFSETS[None, :, :] * self.cell_span[:, None, None]
        keys = corners[..., 0] * (n_fine + 1) + corners[..., 1]
        node_keys, inverse = np.unique(keys.ravel(), return_inverse=True)
        self.cell_nodes = inverse.reshape(-1, 4)
        self.node_ij = np.stack([node_keys // (n_fine + 1), node_keys % (n_fine + 1)], axis=1)
        self.node_coords = np.column_stack([
            x0 + self.node_ij[:, 0] * (x1 - x0) / n_fine,
            y0 + self.node_ij[:, 1] * (y1 - y0) / n_fine,
        ])
        self.cell_hx = (x1 - x0) / 2.0 ** self.cell_levels
        self.cell_hy = (y1 - y0) / 2.0 ** self.cell_levels
        self.cell_area = self.cell_hx * self.cell_hy

        # A node sitting at the midpoint of a leaf edge hangs on that edge
        self.hanging_parents: Dict[int, Tuple[int, int]] = {}
        for a, b in ((0, 1), (1, 2), (2, 3), (3, 0)):
            mid = (corners[:, a, :] + corners[:, b, :]) // 2
            mid_keys = mid[:, 0] * (n_fine + 1) + mid[:, 1]
            pos = np.searchsorted(node_keys, mid_keys)
            pos = np.minimum(pos, len(node_keys) - 1)
            found = (node_keys[pos] == mid_keys) & (self.cell_span >= 2)
            for c in np.flatnonzero(found):
                self.hanging_parents[int(pos[c])] = (int(self.cell_nodes[c, a]), int(self.cell_nodes[c, b]))

        nn = len(node_keys)
        self.is_hanging = np.zeros(nn, dtype=bool)
        self.is_hanging[list(self.hanging_parents)] = True
        self.conforming_nodes = np.flatnonzero(~self.is_hanging)
        self.node_dof = np.full(nn, -1, dtype=np.int64)
        self.node_dof[self.conforming_nodes] = np.arange(len(self.conforming_nodes))
        self.prolongation = self._build_prolongation()

    def _build_prolongation(self):
        weights: Dict[int, Dict[int, float]] = {}

        def resolve(node, depth=0):
            if node in weights:
                return weights[node]
            if depth > self.max_level + 2:
                raise MeshError("Cyclic hanging node constraints")
            if not self.is_hanging[node]:
                w = {int(self.node_dof[node]): 1.0}
            else:
                a, b = self.hanging_parents[node]
                w = {}
                for parent in (a, b):
                    for dof, val in resolve(parent, depth + 1).items():
                        w[dof] = w.get(dof, 0.0) + 0.5 * val
            weights[node] = w
            return w

        rows, cols, vals = [], [], []
        for node in range(self.nnodes):
            for dof, val in resolve(node).items():
                rows.append(node)
                cols.append(dof)
                vals.append(val)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(self.nnodes, self.ndofs))

    # ------------------------------------------------------------------
    # Basic properties
    # ------------------------------------------------------------------

    @property
    def ncells(self):
        return len(self.cells)

    @property
    def nnodes(self):
        return len(self.node_ij)

    @property
    def ndofs(self):
        return len(self.conforming_nodes)

    @property
    def area(self):
        x0, y0, x1, y1 = self.domain
        return (x1 - x0) * (y1 - y0)

    @property
    def fingerprint(self):
        return hash((self.domain, self.max_level, self.cells))

    def conforming_coords(self):
        return self.node_coords[self.conforming_nodes]

    # ------------------------------------------------------------------
    # Topology queries
    # ------------------------------------------------------------------

    def covering_leaf(self, level, i, j) -> Optional[Cell]:
        """Leaf containing the level-``level`` cell (i, j), or None if that region is finer."""
        return _covering_leaf(self.cell_index, level, i, j)

    def _adjacent_leaves(self, level, i, j, di, dj) -> List[Cell]:
        """Leaves inside cell (level, i, j) touching its side facing direction (-di, -dj)."""
        if (level, i, j) in self.cell_index:
            return [(level, i, j)]
        if level >= self.max_level:
            return []
        children = []
        for ci in (0, 1):
            for cj in (0, 1):
                if di == 1 and ci == 1 or di == -1 and ci == 0:
                    continue
                if dj == 1 and cj == 1 or dj == -1 and cj == 0:
                    continue
                children.extend(self._adjacent_leaves(level + 1, 2 * i + ci, 2 * j + cj, di, dj))
        return children

    def edge_neighbors(self, index) -> List[int]:
        """Indices of the leaf cells sharing an edge with cell ``index``."""
        level, i, j = self.cells[index]
        n = 2 ** level
        result = []
        for di, dj in NEIGHBOR_OFFSETS:
            ni, nj = i + di, j + dj
            if not (0 <= ni < n and 0 <= nj < n):
                continue
            cover = self.covering_leaf(level, ni, nj)
            if cover is not None:
                result.append(self.cell_index[cover])
            else:
                result.extend(self.cell_index[c] for c in self._adjacent_leaves(level, ni, nj, di, dj))
        return result

    def is_balanced(self):
        return not self.balance_violations()

    def balance_violations(self) -> Set[Cell]:
        return _balance_violations(self.cell_index)

    def check_consistency(self):
        """Full scan: tiling, 2:1 balance and hanging node parents. Raises MeshError."""
        if not np.isclose(self.cell_area.sum(), self.area, rtol=1e-12, atol=0.0):
            raise MeshError("Leaf cells do not tile the domain")
        n_fine = 2 ** self.max_level
        covered = sum(int(s) ** 2 for s in self.cell_span)
        if covered != n_fine ** 2:
            raise MeshError("Leaf cells overlap or leave gaps")
        if not self.is_balanced():
            raise MeshError("Mesh violates 2:1 balance")
        for node, (a, b) in self.hanging_parents.items():
            if not np.array_equal(2 * self.node_ij[node], self.node_ij[a] + self.node_ij[b]):
                raise MeshError(f"Hanging node {node} is not the midpoint of its parents")
        row_sums = np.asarray(self.prolongation.sum(axis=1)).ravel()
        if not np.allclose(row_sums, 1.0, atol=1e-14):
            raise MeshError("Hanging node weights do not sum to one")
        return True

    # ------------------------------------------------------------------
    # Boundary
    # ------------------------------------------------------------------

    def boundary_edges(self, segments: Sequence[BoundarySegment]):
        """Leaf edges lying on the given segments.

        Returns:
            Arrays (node_a, node_b, segment_index, length).
        """
        n_fine = 2 ** self.max_level
        x0, y0, x1, y1 = self.domain
        na, nb, seg, length = [], [], [], []
        sides = {
            'bottom': (0, 1, lambda o, s: o[:, 1] == 0),
            'right': (1, 2, lambda o, s: o[:, 0] + s == n_fine),
            'top': (3, 2, lambda o, s: o[:, 1] + s == n_fine),
            'left': (0, 3, lambda o, s: o[:, 0] == 0),
        }
        for k, segment in enumerate(segments):
            a, b, on_side = sides[segment.side]
            cells = np.flatnonzero(on_side(self.cell_origin, self.cell_span))
            pa = self.node_coords[self.cell_nodes[cells, a]]
            pb = self.node_coords[self.cell_nodes[cells, b]]
            axis = 1 if segment.side in ('left', 'right') else 0
            mid = 0.5 * (pa[:, axis] + pb[:, axis])
            inside = segment.contains(mid)
            cells = cells[inside]
            na.append(self.cell_nodes[cells, a])
            nb.append(self.cell_nodes[cells, b])
            seg.append(np.full(len(cells), k))
            h = self.cell_hy[cells] if axis == 1 else self.cell_hx[cells]
            length.append(h)
        if not na:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty, np.zeros(0)
        return np.concatenate(na), np.concatenate(nb), np.concatenate(seg), np.concatenate(length)

    def segment_nodes(self, segments: Sequence[BoundarySegment]):
        """Sorted node indices on the given boundary segments."""
        a, b, _, _ = self.boundary_edges(segments)
        return np.unique(np.concatenate([a, b]))

    # ------------------------------------------------------------------
    # Point location
    # ------------------------------------------------------------------

    def locate(self, points):
        """Leaf cell index and local coordinates (xi, eta) in [0, 1]^2 for each point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        x0, y0, x1, y1 = self.domain
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        outside = ((points[:, 0] < x0 - tol) | (points[:, 0] > x1 + tol)
                   | (points[:, 1] < y0 - tol) | (points[:, 1] > y1 + tol))
        if np.any(outside):
            raise MeshError("Points outside the mesh domain")
        cells = np.full(len(points), -1, dtype=np.int64)
        local = np.zeros((len(points), 2))
        for level in range(self.max_level + 1):
            todo = np.flatnonzero(cells < 0)
            if todo.size == 0:
                break
            n = 2 ** level
            hx, hy = (x1 - x0) / n, (y1 - y0) / n
            fi = (points[todo, 0] - x0) / hx
            fj = (points[todo, 1] - y0) / hy
            ii = np.clip(np.floor(fi).astype(np.int64), 0, n - 1)
            jj = np.clip(np.floor(fj).astype(np.int64), 0, n - 1)
            for p, i, j, a, b in zip(todo, ii, jj, fi, fj):
                k = self.cell_index.get((level, int(i), int(j)))
                if k is not None:
                    cells[p] = k
                    local[p] = (a - i, b - j)
        return cells, np.clip(local, 0.0, 1.0)

    def __repr__(self):
        return (f"QuadMesh(ncells={self.ncells}, nnodes={self.nnodes}, "
                f"hanging={len(self.hanging_parents)}, max_level={self.max_level})")


class NodalField:
    """Piecewise bilinear finite element function given by its conforming nodal values."""

    def __init__(self, mesh: QuadMesh, values):
        values = np.array(values, dtype=float)
        if values.shape[0] != mesh.ndofs or values.ndim not in (1, 2):
            raise MeshError(f"Field has {values.shape[0]} values, mesh has {mesh.ndofs} conforming nodes")
        self.mesh = mesh
        self.values = values

    @classmethod
    def constant(cls, mesh, value, components=1):
        shape = (mesh.ndofs,) if components == 1 else (mesh.ndofs, components)
        return cls(mesh, np.full(shape, float(value)))

    @classmethod
    def from_function(cls, mesh, func):
        """Interpolate ``func(x, y)``; a tuple result gives a vector-valued field."""
        xy = mesh.conforming_coords()
        result = func(xy[:, 0], xy[:, 1])
        if isinstance(result, tuple):
            values = np.column_stack([np.broadcast_to(r, (mesh.ndofs,)) for r in result])
        else:
            values = np.broadcast_to(np.asarray(result, dtype=float), (mesh.ndofs,))
        return cls(mesh, values)

    @property
    def components(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def node_values(self):
        """Values at all nodes, hanging nodes included."""
        return self.mesh.prolongation @ self.values

    def evaluate(self, points):
        cells, local = self.mesh.locate(points)
        corner_values = self.node_values()[self.mesh.cell_nodes[cells]]
        weights = shape_functions(local[:, 0], local[:, 1])
        if self.components == 1:
            return np.sum(weights * corner_values, axis=1)
        return np.einsum('pa,pac->pc', weights, corner_values)

    def copy(self):
        return NodalField(self.mesh, self.values.copy())

    def __repr__(self):
        return f"NodalField(ndofs={self.mesh.ndofs}, components={self.components})"


def _covering_leaf(leaves, level, i, j) -> Optional[Cell]:
    for s in range(level + 1):
        key = (level - s, i >> s, j >> s)
        if key in leaves:
            return key
    return None


def _balance_violations(leaves) -> Set[Cell]:
    """Leaves that are more than one level coarser than an edge neighbor."""
    bad = set()
    for level, i, j in leaves:
        n = 2 ** level
        for di, dj in NEIGHBOR_OFFSETS:
            ni, nj = i + di, j + dj
            if not (0 <= ni < n and 0 <= nj < n):
                continue
            cover = _covering_leaf(leaves, level, ni, nj)
            if cover is not None and cover[0] < level - 1:
                bad.add(cover)
    return bad


def _split(leaves: Set[Cell], cell: Cell):
    level, i, j = cell
    leaves.remove(cell)
    for ci in (0, 1):
        for cj in (0, 1):
            leaves.add((level + 1, 2 * i + ci, 2 * j + cj))


def refine_cells(mesh: QuadMesh, marks: Iterable[Cell]) -> QuadMesh:
    """Split the marked leaves and close the result under 2:1 balance."""
    marks = set(marks)
    if not marks:
        return mesh
    leaves = set(mesh.cells)
    unknown = marks - leaves
    if unknown:
        raise MeshError(f"Marked cells are not leaf cells: {sorted(unknown)[:3]}")
    if any(level >= mesh.max_level for level, _, _ in marks):
        raise MeshError("max depth exceeded")

    for cell in marks:
        _split(leaves, cell)

    closure = 0
    while True:
        violations = _balance_violations(leaves)
        if not violations:
            break
        for cell in violations:
            _split(leaves, cell)
        closure += len(violations)

    refined = QuadMesh(leaves, mesh.max_level, mesh.domain, mesh.dirichlet, mesh.neumann)
    logger.debug(f"Refined {len(marks)} marked cells, {closure} for balance: "
                 f"{mesh.ncells} -> {refined.ncells} cells")
    return refined


def mark_interface_cells(mesh: QuadMesh, V: NodalField, threshold: float = 1.0,
                         min_size: Optional[float] = None) -> Set[Cell]:
    """Cells whose average phase gradient exceeds ``threshold``, plus their edge neighbors.

    With ``min_size`` cells no wider than min_size are left out.
    """
    vals = V.node_values()[mesh.cell_nodes]
    gx = ((vals[:, 1] - vals[:, 0]) + (vals[:, 2] - vals[:, 3])) / (2.0 * mesh.cell_hx)
    gy = ((vals[:, 3] - vals[:, 0]) + (vals[:, 2] - vals[:, 1])) / (2.0 * mesh.cell_hy)
    steep = np.flatnonzero(np.hypot(gx, gy) > threshold)
    marked = set(int(c) for c in steep)
    for c in steep:
        marked.update(mesh.edge_neighbors(int(c)))
    if min_size is not None:
        size = np.maximum(mesh.cell_hx, mesh.cell_hy)
        marked = {k for k in marked if size[k] > min_size * (1.0 + 1e-12)}
    return {mesh.cells[k] for k in marked}


def prolongate(field: NodalField, old: QuadMesh, new: QuadMesh) -> NodalField:
    """Transfer a field to a refinement of its mesh by bilinear interpolation."""
    if field.mesh is not old and field.mesh.fingerprint != old.fingerprint:
        raise MeshError("Field is not defined on the old mesh")
    if old.domain != new.domain or old.max_level != new.max_level:
        raise MeshError("meshes are not nested")
    if new is old:
        return field.copy()

    ancestors = np.empty(new.ncells, dtype=np.int64)
    for k, (level, i, j) in enumerate(new.cells):
        for s in range(level + 1):
            idx = old.cell_index.get((level - s, i >> s, j >> s))
            if idx is not None:
                ancestors[k] = idx
                break
        else:
            raise MeshError("meshes are not nested")

    old_nodes = field.node_values()[old.cell_nodes[ancestors]]
    corners = new.node_ij[new.cell_nodes]
    local = (corners - old.cell_origin[ancestors][:, None, :]) / old.cell_span[ancestors][:, None, None]
    weights = shape_functions(local[..., 0], local[..., 1])
    if field.components == 1:
        interp = np.einsum('cpa,ca->cp', weights, old_nodes)
        node_vals = np.empty(new.nnodes)
    else:
        interp = np.einsum('cpa,cak->cpk', weights, old_nodes)
        node_vals = np.empty((new.nnodes, field.components))
    node_vals[new.cell_nodes] = interp
    return NodalField(new, node_vals[new.conforming_nodes])
