"""Temporal adversarial-example attacks against recurrent NIDS classifiers.

The package trains recurrent traffic classifiers (plain RNN, LSTM, GRU),
builds time-dilated surrogates of them, and trains an autoencoder that
rewrites only the non-functional feature columns of attack records so
that whole detection windows, including the untouched records that
follow, are misjudged as normal traffic.
"""

from .errors import (
    ConfigError,
    InputError,
    IntegrityError,
    NumericError,
    RecipeAssertionError,
    SchemaError,
    TempadvError,
    UsageError,
)

__all__ = [
    "TempadvError",
    "ConfigError",
    "InputError",
    "NumericError",
    "SchemaError",
    "UsageError",
    "IntegrityError",
    "RecipeAssertionError",
]

__version__ = "0.1.0"
