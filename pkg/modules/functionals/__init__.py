from modules.functionals.phase_field import (CostWeights, PhaseFieldParams, char_approx, double_well,
                                             perimeter_energy, volume)

__all__ = ['CostWeights', 'PhaseFieldParams', 'char_approx', 'double_well', 'perimeter_energy', 'volume']
