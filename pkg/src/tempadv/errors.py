"""Exception hierarchy.

Every error the package raises derives from TempadvError so callers can
catch at one level; the CLI maps subclasses to exit codes (user/config
errors exit 2, recipe assertion failures exit 3, the rest exit 1).
"""


class TempadvError(Exception):
    pass


class ConfigError(TempadvError):
    """Bad configuration: shape mismatches, invalid hyperparameters."""


class InputError(TempadvError):
    """Bad runtime input: out-of-range class index, empty sequence."""


class NumericError(TempadvError):
    """Non-finite values where finite ones are required."""


class SchemaError(TempadvError):
    """Malformed or inconsistent feature schema."""


class UsageError(TempadvError):
    """API misuse: wrong feature width, mismatched artifact/model pairing."""


class IntegrityError(TempadvError):
    """Corrupt, truncated, or version-skewed checkpoint container."""


class RecipeAssertionError(TempadvError):
    """An assertion embedded in an experiment recipe failed."""
