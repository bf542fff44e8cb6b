#!/usr/bin/env python3
import argparse
import logging
import os
import sys
from datetime import datetime

from modules.integration.config_manager import DEFAULT_PRESET, ConfigManager, export_default_config
from modules.integration.errors import BenchmarkError, ConfigError, StageFailure
from modules.integration.experiment_runner import run_experiment
from modules.integration.presets import PRESET_NAMES


def setup_logging(log_level, log_file=None):
    """Set up logging configuration."""
    log_levels = {
        'DEBUG': logging.DEBUG,
        'INFO': logging.INFO,
        'WARNING': logging.WARNING,
        'ERROR': logging.ERROR,
        'CRITICAL': logging.CRITICAL
    }
    level = log_levels.get(log_level, logging.INFO)

    # Create logs directory if it doesn't exist
    os.makedirs('logs', exist_ok=True)

    # Default log file name if not provided
    if log_file is None:
        log_file = f'logs/shape_dominance_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ]
    )

    logger = logging.getLogger('ShapeDominance')
    logger.info(f"Logging initialized at level {log_level}")
    return logger


def build_parser():
    """Command-line parser."""
    parser = argparse.ArgumentParser(
        description='Phase-field shape optimization under stochastic dominance constraints')
    parser.add_argument('--log-level', type=str, default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        help='Set the logging level')
    parser.add_argument('--log-file', type=str, help='Path to log file')
    parser.add_argument('--export-config', type=str, help='Export default configuration to file')

    subparsers = parser.add_subparsers(dest='command')
    run = subparsers.add_parser('run', help='Run one experiment')
    run.add_argument('--config', type=str, help='Path to configuration file (YAML or JSON)')
    run.add_argument('--order', choices=['first', 'second', 'none'], help='Dominance order of the constraints')
    run.add_argument('--out', type=str, help='Output directory')
    run.add_argument('--preset', choices=PRESET_NAMES, help='Experiment preset')
    run.add_argument('--tol', type=float, help='KKT tolerance of the final stage')
    run.add_argument('--max-level', type=int, help='Maximum quadtree level')
    return parser


def parse_args(argv=None):
    """Parse command-line arguments."""
    return build_parser().parse_args(argv)


def overrides_from_args(args):
    """Command-line values as a configuration fragment."""
    overrides = {}
    if args.preset:
        overrides['preset'] = args.preset
    if args.order:
        overrides['order'] = args.order
    if args.out:
        overrides.setdefault('output', {})['directory'] = args.out
    if args.tol is not None:
        overrides.setdefault('solver', {})['final_tol'] = args.tol
    if args.max_level is not None:
        overrides.setdefault('mesh', {})['max_level'] = args.max_level
    return overrides


def load_config(config_path=None, overrides=None):
    """Load the experiment configuration; without a file or preset the default preset is used."""
    config_manager = ConfigManager()
    user = config_manager.load_config(config_path) if config_path else {}
    overrides = dict(overrides or {})
    if not user.get('preset') and not overrides.get('preset') and not user.get('scenarios'):
        logging.info(f"No preset or scenarios given; filling in the {DEFAULT_PRESET} preset")
        user = {**user, 'preset': DEFAULT_PRESET}
    return config_manager.build(config_manager.merged(user, overrides))


def main(argv=None):
    """Main entry point."""
    args = parse_args(argv)

    # Handle config export request
    if args.export_config:
        try:
            export_default_config(args.export_config)
        except (ConfigError, OSError) as e:
            print(f"Failed to export configuration: {e}")
            return 1
        print(f"Default configuration exported to {args.export_config}")
        return 0

    if args.command != 'run':
        build_parser().print_help()
        return 1

    logger = setup_logging(args.log_level, args.log_file)

    try:
        config = load_config(args.config, overrides_from_args(args))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1

    logger.info(f"Running preset={config.preset} order={config.order.value if config.order else None} "
                f"-> {config.output.directory}")
    try:
        summary = run_experiment(config)
    except StageFailure as e:
        logger.error(str(e), exc_info=True)
        return 2
    except BenchmarkError as e:
        logger.error(f"Benchmark error: {e}")
        return 2
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    except Exception as e:
        logger.error(f"Error running experiment: {e}", exc_info=True)
        return 1

    if summary.exit_code != 0:
        logger.warning(f"Run flagged: {summary.message}; success={summary.success}")
    return summary.exit_code


if __name__ == "__main__":
    sys.exit(main())
