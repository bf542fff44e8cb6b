"""
Adaptive quadtree meshes and bilinear nodal fields.
"""

from modules.mesh.quadtree_mesh import (BoundarySegment, MeshError, NodalField, QuadMesh, Rectangle,
                                        mark_interface_cells, prolongate, refine_cells)

__all__ = ['BoundarySegment', 'MeshError', 'NodalField', 'QuadMesh', 'Rectangle',
           'mark_interface_cells', 'prolongate', 'refine_cells']
