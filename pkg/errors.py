"""
Exception hierarchy shared by the library modules and the command line.
Library code raises these; only main.py turns them into exit codes.
"""


class TimePrefError(Exception):
    """Base class. exit_code is what the command line returns for it."""
    exit_code = 1


# core
class DivergentCycleError(TimePrefError):
    exit_code = 3


class SingularSystemError(TimePrefError):
    exit_code = 3


class DivergenceError(TimePrefError):
    exit_code = 3


# aggregation
class IndexMismatchError(TimePrefError):
    exit_code = 3


class SensitivityError(TimePrefError):
    """All weights are zero."""
    exit_code = 3


class ZeroWeightSumError(TimePrefError):
    exit_code = 3


# augmentation
class ZeroAggregateDiscountError(TimePrefError):
    exit_code = 3


# planning
class PlannerCapError(TimePrefError):
    exit_code = 5


class NoCandidateError(TimePrefError):
    exit_code = 3


class NonUniqueStationaryError(TimePrefError):
    exit_code = 3


class DegenerateInstanceError(TimePrefError):
    exit_code = 3


# cli
class ScenarioParseError(TimePrefError):
    exit_code = 2


class ScenarioSchemaError(TimePrefError):
    exit_code = 2

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ScenarioSemanticError(TimePrefError):
    exit_code = 3


class TrajectoryTokenError(TimePrefError):
    exit_code = 4
