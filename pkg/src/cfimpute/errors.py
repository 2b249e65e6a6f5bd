"""Exception and warning types shared across the package."""


class CfImputeError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class PanelError(CfImputeError, ValueError):
    """Malformed panel input. Carries the offending row (1-based, header = row 1) and column."""

    category = "invalid_input"

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class RankDeficientError(CfImputeError, ValueError):
    category = "rank_deficient"

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"rank-deficient design; offending columns: {', '.join(self.columns)}")


class ModelFitError(CfImputeError, RuntimeError):
    category = "model_fit"


class ColumnMismatchError(CfImputeError, ValueError):
    category = "column_mismatch"


class ReplicateError(CfImputeError, RuntimeError):
    """Too many bootstrap replicates or simulations failed."""

    category = "replicate_failure"


class ConfigError(CfImputeError, ValueError):
    category = "config"


class SeparationWarning(UserWarning):
    """Logistic fit hit (quasi-)separation and was refit with a ridge penalty."""


class PositivityWarning(UserWarning):
    pass


class PoolingWarning(UserWarning):
    pass


class KnotWarning(UserWarning):
    """Fewer distinct spline-covariate values than requested knots."""


def annotate(exc, where):
    """Prefix ``exc``'s message with ``where`` and return it for re-raising."""
    if exc.args:
        exc.args = (f"{where}: {exc.args[0]}",) + exc.args[1:]
    else:
        exc.args = (where,)
    return exc
