"""
Plain-text mesh and phase-field dumps.

Mesh dump: a ``mesh <ncells> <nnodes>`` header, one ``x0 y0 x1 y1 level`` line
per leaf cell, then one ``x y kind`` line per node. A phase-field dump appends
one ``node_index value`` line per conforming node.
"""

import logging
import os

import numpy as np

from modules.mesh.quadtree_mesh import MeshError, NodalField, QuadMesh

logger = logging.getLogger("MeshIO")


def _fmt(value):
    # repr keeps the shortest string that round-trips the double exactly
    return repr(float(value))


def mesh_lines(mesh: QuadMesh):
    lines = [f"mesh {mesh.ncells} {mesh.nnodes}"]
    x0, y0, x1, y1 = mesh.domain
    for k, (level, i, j) in enumerate(mesh.cells):
        hx, hy = mesh.cell_hx[k], mesh.cell_hy[k]
        lines.append(f"{_fmt(x0 + i * hx)} {_fmt(y0 + j * hy)} "
                     f"{_fmt(x0 + (i + 1) * hx)} {_fmt(y0 + (j + 1) * hy)} {level}")
    for node, (x, y) in enumerate(mesh.node_coords):
        kind = 'hanging' if mesh.is_hanging[node] else 'conforming'
        lines.append(f"{_fmt(x)} {_fmt(y)} {kind}")
    return lines


def write_mesh(mesh: QuadMesh, path):
    _write(path, mesh_lines(mesh))


def write_phase_field(field: NodalField, path):
    if field.components != 1:
        raise MeshError("Only scalar fields can be written as phase-field dumps")
    mesh = field.mesh
    lines = mesh_lines(mesh)
    for node, value in zip(mesh.conforming_nodes, field.values):
        lines.append(f"{node} {_fmt(value)}")
    _write(path, lines)


def _write(path, lines):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        f.write('\n'.join(lines))
        f.write('\n')
    logger.debug(f"Wrote {path}")


def _parse_mesh(lines, max_level=None):
    header = lines[0].split()
    if len(header) != 3 or header[0] != 'mesh':
        raise MeshError(f"Not a mesh dump: {lines[0]!r}")
    ncells, nnodes = int(header[1]), int(header[2])
    if len(lines) < 1 + ncells + nnodes:
        raise MeshError("Truncated mesh dump")

    boxes = np.array([[float(v) for v in line.split()[:4]] for line in lines[1:1 + ncells]])
    levels = np.array([int(line.split()[4]) for line in lines[1:1 + ncells]])
    domain = (boxes[:, 0].min(), boxes[:, 1].min(), boxes[:, 2].max(), boxes[:, 3].max())
    width, height = domain[2] - domain[0], domain[3] - domain[1]
    i = np.rint((boxes[:, 0] - domain[0]) / width * 2.0 ** levels).astype(int)
    j = np.rint((boxes[:, 1] - domain[1]) / height * 2.0 ** levels).astype(int)
    cells = list(zip(levels.tolist(), i.tolist(), j.tolist()))
    if max_level is None:
        max_level = int(levels.max())
    mesh = QuadMesh(cells, max_level=max(max_level, int(levels.max())), domain=domain)

    nodes = np.array([[float(v) for v in line.split()[:2]] for line in lines[1 + ncells:1 + ncells + nnodes]])
    return mesh, nodes, 1 + ncells + nnodes


def read_mesh(path, max_level=None) -> QuadMesh:
    with open(path) as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    mesh, _, _ = _parse_mesh(lines, max_level)
    return mesh


def read_phase_field(path, max_level=None) -> NodalField:
    """Rebuild the mesh of a phase-field dump and the field on it."""
    with open(path) as f:
        lines = [line for line in f.read().splitlines() if line.strip()]
    mesh, nodes, start = _parse_mesh(lines, max_level)

    n_fine = 2 ** mesh.max_level
    x0, y0, x1, y1 = mesh.domain
    grid = np.rint(np.column_stack([(nodes[:, 0] - x0) / (x1 - x0) * n_fine,
                                    (nodes[:, 1] - y0) / (y1 - y0) * n_fine])).astype(np.int64)
    key_to_node = {(int(a), int(b)): k for k, (a, b) in enumerate(mesh.node_ij)}

    values = np.full(mesh.ndofs, np.nan)
    for line in lines[start:]:
        index, value = line.split()
        index = int(index)
        node = key_to_node.get(tuple(grid[index]))
        if node is None or mesh.node_dof[node] < 0:
            raise MeshError(f"Value for node {index} does not match a conforming node")
        values[mesh.node_dof[node]] = float(value)
    if np.isnan(values).any():
        raise MeshError(f"Phase-field dump {path} misses {int(np.isnan(values).sum())} nodal values")
    logger.info(f"Read phase field from {path}: {mesh}")
    return NodalField(mesh, values)


def project_field(field: NodalField, mesh: QuadMesh) -> NodalField:
    """Evaluate a field at the conforming nodes of another mesh over the same domain."""
    if not np.allclose(field.mesh.domain, mesh.domain, rtol=0.0, atol=1e-10):
        raise MeshError(f"Field domain {field.mesh.domain} does not match mesh domain {mesh.domain}")
    return NodalField(mesh, field.evaluate(mesh.conforming_coords()))
