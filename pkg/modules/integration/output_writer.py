"""
Plain-text experiment artifacts: phase-field dumps, CDF/ISF tables, stress
fields, the stage log and the run summary.
"""

import logging
import os
from typing import List

import numpy as np

from modules.mesh.mesh_io import write_phase_field
from modules.mesh.quadtree_mesh import NodalField
from modules.stochastic.distribution import CostDistribution, cdf, integrated_survival

logger = logging.getLogger("OutputWriter")

STAGE_LOG_HEADER = "# stage eps gamma_h gamma_m ncells obj kkt min_slack"


class OutputWriter:
    """Writes every artifact of one run below a single directory and remembers the paths."""

    def __init__(self, directory):
        self.directory = directory
        self.artifacts: List[str] = []
        os.makedirs(directory, exist_ok=True)
        self._stage_log = os.path.join(directory, 'stages.log')
        with open(self._stage_log, 'w') as f:
            f.write(STAGE_LOG_HEADER + '\n')
        self.artifacts.append(self._stage_log)

    def path(self, name):
        return os.path.join(self.directory, name)

    def _record(self, path):
        if path not in self.artifacts:
            self.artifacts.append(path)
        logger.debug(f"Wrote {path}")
        return path

    def phase_field(self, V: NodalField, name):
        path = self.path(f"phasefield_{name}.dat")
        write_phase_field(V, path)
        return self._record(path)

    def stage_line(self, line):
        with open(self._stage_log, 'a') as f:
            f.write(line + '\n')

    def distribution_tables(self, prefix, dist: CostDistribution, grid):
        """Two-column tables ``t F`` and ``t isf`` on the given grid."""
        grid = np.asarray(grid, dtype=float)
        paths = []
        for kind, values in (('cdf', cdf(dist, grid)), ('isf', integrated_survival(dist, grid))):
            path = self.path(f"{prefix}_{kind}.dat")
            column = 'F' if kind == 'cdf' else 'isf'
            with open(path, 'w') as f:
                f.write(f"# t {column}\n")
                for t, v in zip(grid, np.atleast_1d(values)):
                    f.write(f"{float(t)!r} {float(v)!r}\n")
            paths.append(self._record(path))
        return paths

    def stress(self, index, vm: NodalField, masked: NodalField, threshold=None):
        path = self.path(f"stress_s{index}.dat")
        xy = vm.mesh.conforming_coords()
        with open(path, 'w') as f:
            if threshold is not None:
                f.write(f"# threshold {float(threshold)!r}\n")
            f.write("# x y sigma_vm masked\n")
            for (x, y), s, m in zip(xy, vm.values, masked.values):
                f.write(f"{float(x)!r} {float(y)!r} {float(s)!r} {float(m)!r}\n")
        return self._record(path)

    def summary(self, lines):
        path = self.path('summary.txt')
        with open(path, 'w') as f:
            f.write('\n'.join(lines) + '\n')
        return self._record(path)
