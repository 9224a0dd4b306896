"""Exception types shared across the toolkit."""


class SimgapError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SimgapError, ValueError):
    """Array shape or length does not match the declared dimensions."""


class DegenerateImageError(SimgapError, ValueError):
    """Image cannot be self-normalized (non-positive mean)."""


class CorruptDatasetError(SimgapError, ValueError):
    """On-disk dataset is inconsistent with its manifest."""


class MissingManifestError(CorruptDatasetError):
    """Dataset directory has no manifest file."""


class NumericsError(SimgapError, ArithmeticError):
    """A loss or gradient became non-finite; carries the offending name."""

    def __init__(self, message: str, tensor_name: str | None = None):
        super().__init__(message)
        self.tensor_name = tensor_name


class UnknownSelectorError(SimgapError, KeyError):
    """Layer selector does not resolve to any parameter subset."""


class DegenerateVarianceError(SimgapError, ValueError):
    """Prediction spread is too small for variance correction."""


class UndefinedLossError(SimgapError, ValueError):
    """Loss has empty support (e.g. nothing is masked)."""


class DegenerateTestError(SimgapError, ValueError):
    """Paired test is undefined (zero difference variance)."""


class NoValidConfigError(SimgapError, ValueError):
    """Every configuration in the landscape is infeasible (+inf error)."""


class UsageError(SimgapError, ValueError):
    """Bad arguments or missing inputs at the command-line level."""
