"""Exception and warning classes shared across the package."""


class FoodAccessError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FoodAccessError, ValueError):
    """Bad argument values: out-of-range coordinates, empty lists, duplicate ids."""


class InvalidConfigError(FoodAccessError, ValueError):
    """A simulation or sampling configuration that cannot be honoured."""


# --- distances -------------------------------------------------------------

class ProviderError(FoodAccessError):
    """A map-distance provider failed to return a distance."""


class MissingDistanceError(ProviderError, KeyError):
    """A precomputed distance file has no entry for the requested pair."""

    def __str__(self):
        return Exception.__str__(self)


class BudgetExhaustedError(ProviderError):
    """The remote provider's query budget has been used up."""


class PartialResultError(FoodAccessError):
    """Map proximity for one neighborhood could not be completed."""

    def __init__(self, neighborhood_id, cause):
        self.neighborhood_id = neighborhood_id
        self.cause = cause
        super().__init__(f"map proximity for neighborhood {neighborhood_id!r} "
                         f"incomplete: {cause}")


# --- sampling ----------------------------------------------------------------

class DegenerateTruncationError(FoodAccessError, ValueError):
    """The truncation interval carries (numerically) no probability mass."""


# --- fitting -----------------------------------------------------------------

class SingularDesignError(FoodAccessError, ValueError):
    """The design matrix is rank deficient."""


class ZeroCountError(FoodAccessError, ValueError):
    """log(Y) requested for a validated row with Y = 0."""


class InsufficientValidationError(FoodAccessError, ValueError):
    """Too few queried rows to fit the requested model."""


class UnavailableStrategyError(FoodAccessError):
    """An analysis strategy cannot be computed from the supplied data."""


class ScenarioDegenerateError(FoodAccessError):
    """More replicates failed than a simulation scenario tolerates."""


# --- spatial -----------------------------------------------------------------

class DegenerateInputError(FoodAccessError, ValueError):
    """Input values carry no variation."""


class InvalidGraphError(FoodAccessError, ValueError):
    """Adjacency structure unusable (no edges, self loops, unknown nodes)."""


# --- warnings ----------------------------------------------------------------

class DistanceConsistencyWarning(UserWarning):
    """A map-based distance came back shorter than the straight-line one."""
