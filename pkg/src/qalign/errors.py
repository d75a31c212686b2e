"""Exception hierarchy shared across the package.

Three coarse families map onto the CLI exit codes: ``InputError`` (bad files,
bad config, bad records; exit 2), ``AdapterError`` (external text-transform
adapters; exit 3), and ``NumericError`` (non-finite losses or gradients;
exit 4).
"""

from __future__ import annotations


class QalignError(Exception):
    """Base class for all package errors."""


class InputError(QalignError):
    """Invalid user input: files, formats, configuration, record contents."""


class AdapterError(QalignError):
    """A text-transform adapter failed or violated its contract."""


class NumericError(QalignError):
    """Numerical failure during optimization (non-finite loss/gradient)."""
