"""
Demo script: a coarse cantilever run with first-order dominance constraints.

Runs in a few minutes on a laptop. For the full experiments use
``python main.py run --config configs/cantilever_equal.yaml``.
"""

import logging
import os

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.StreamHandler()
    ]
)

logger = logging.getLogger("ShapeDominanceDemo")

from modules.integration.config_manager import ConfigManager
from modules.integration.experiment_runner import run_experiment

DEMO_DIRECTORY = os.path.join("results", "demo")


def setup_directories():
    """Create the directories for logs and results."""
    os.makedirs("logs", exist_ok=True)
    os.makedirs(DEMO_DIRECTORY, exist_ok=True)


def demo_config():
    """The cantilever-equal preset on a coarse mesh with a short schedule."""
    manager = ConfigManager()
    data = manager.merged({
        'preset': 'cantilever-equal',
        'order': 'first',
        'mesh': {'initial_level': 4, 'max_level': 6},
        'phase_field': {'epsilon': 0.05, 'epsilon_min': 0.0375},
        'solver': {'max_refinements': 1, 'max_outer_iterations': 10, 'final_tol': 1e-4},
        'benchmark': {'require_convergence': False},
        'output': {'directory': DEMO_DIRECTORY, 'write_stage_fields': False},
    })
    return manager.build(data)


def main():
    setup_directories()
    config = demo_config()
    logger.info(f"Demo: preset {config.preset}, {len(config.scenarios)} scenarios, "
                f"order {config.order.value}")

    summary = run_experiment(config)

    logger.info("Run summary:")
    for line in summary.to_lines():
        logger.info(f"  {line}")
    for name, risk in summary.risk.items():
        logger.info(f"{name}: mean cost {risk.mean:.4g}, P[cost > worst benchmark] {risk.excess_probability:.3g}")
    logger.info(f"Artifacts written to {DEMO_DIRECTORY}: {len(summary.artifacts)} files")
    return summary.exit_code


if __name__ == "__main__":
    exit(main())
