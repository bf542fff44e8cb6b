"""
Errors raised while configuring and running experiments.
"""


class ConfigError(Exception):
    """Invalid experiment configuration."""


class ProbabilitySumError(ConfigError):
    pass


class BoundaryOverlapError(ConfigError):
    pass


class UnknownPresetError(ConfigError):
    pass


class NegativeWeightError(ConfigError):
    pass


class EmptyScenarioError(ConfigError):
    pass


class BenchmarkError(Exception):
    """The benchmark phase field could not be loaded or generated."""


class StageFailure(Exception):
    """A continuation stage failed; carries the stage index and the files written so far."""

    def __init__(self, stage, cause, artifacts=()):
        self.stage = stage
        self.cause = cause
        self.artifacts = list(artifacts)
        paths = ', '.join(self.artifacts) or 'none'
        super().__init__(f"Stage {stage} failed: {cause} (partial artifacts: {paths})")
