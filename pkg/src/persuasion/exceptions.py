"""Typed errors raised across the package.

Every error carries a stable ``code`` string so the CLI can serialise it and
pick an exit status without string matching.
"""

from __future__ import annotations


class PersuasionError(Exception):
    """Base class. ``details`` is a JSON-serialisable dict."""

    code = "error"
    exit_code = 1

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


class ConfigError(PersuasionError):
    code = "config_error"
    exit_code = 64


class InvalidModel(ConfigError):
    code = "invalid_model"


class InvalidPrior(ConfigError):
    code = "invalid_prior"


class UnknownFixture(ConfigError):
    code = "unknown_fixture"


class NoRoot(PersuasionError):
    code = "no_root"


class BoundaryOptimum(PersuasionError):
    """Receiver's aggregate utility keeps one sign over the whole action set."""

    code = "boundary_optimum"

    def __init__(self, message: str = "", *, bound: str, action: float, **details):
        super().__init__(message or f"best response sits at the {bound} action bound", bound=bound, action=action, **details)
        self.bound = bound
        self.action = action


class GridTooLarge(PersuasionError):
    code = "grid_too_large"
    exit_code = 64


class Infeasible(PersuasionError):
    code = "infeasible"
    exit_code = 2


class Unbounded(PersuasionError):
    code = "unbounded"
    exit_code = 2


class IterationLimit(PersuasionError):
    code = "iteration_limit"
    exit_code = 3


class EmptyQ(PersuasionError):
    code = "empty_q"
    exit_code = 3


class DegeneratePair(PersuasionError):
    code = "degenerate_pair"


class ScanTooLarge(PersuasionError):
    code = "scan_too_large"
    exit_code = 64


class MomentNonzero(PersuasionError):
    code = "moment_nonzero"


class NotApplicable(PersuasionError):
    code = "not_applicable"


class SingularSystem(PersuasionError):
    code = "singular_system"
    exit_code = 5


class BracketFailure(PersuasionError):
    code = "bracket_failure"
    exit_code = 5


class PriorHasAtoms(PersuasionError):
    """Raised when the shooting solver is handed a prior with atoms."""

    code = "prior_has_atoms"
    exit_code = 5


class PreconditionFailure(PersuasionError):
    code = "precondition_failure"
    exit_code = 5


class BudgetExhausted(PersuasionError):
    code = "budget_exhausted"


class ToleranceFailure(PersuasionError):
    code = "tolerance_failure"
    exit_code = 3
