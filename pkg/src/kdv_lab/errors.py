"""Error and warning types shared by the kdv_lab modules.

Every error carries a module-qualified ``code`` such as
``linear_control.domain`` so the command line layer can report failures in
a machine-readable way.
"""


class LabError(Exception):
    """Base class. ``kind`` is the suffix of the error code."""

    kind = "error"
    exit_code = 3

    def __init__(self, message, module="kdv_lab", details=None):
        super().__init__(message)
        self.module = module
        self.details = dict(details or {})

    @property
    def code(self):
        return f"{self.module}.{self.kind}"

    def to_dict(self):
        return {"code": self.code, "message": str(self), "details": self.details}


class DomainError(LabError):
    kind = "domain"


class NotCriticalError(LabError):
    kind = "not_critical"


class CriticalLengthError(LabError):
    kind = "critical_length"


class ShapeError(LabError):
    kind = "shape"


class SingularSystemError(LabError):
    kind = "singular"


class NoConvergenceError(LabError):
    kind = "no_convergence"


class PreconditionError(LabError):
    kind = "precondition"


class NonFiniteError(LabError):
    """Raised when a solution slice stops being finite."""

    kind = "non_finite"


class PlanError(LabError):
    kind = "plan"


class AuditFailure(LabError):
    kind = "audit"
    exit_code = 4


class ParseError(LabError):
    kind = "parse"
    exit_code = 2


class ValidationError(LabError):
    kind = "validation"
    exit_code = 2

    def __init__(self, problems, module="cli_io"):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems), module, {"problems": self.problems})


class IllConditionedWarning(UserWarning):
    """The control operator is numerically rank deficient."""
