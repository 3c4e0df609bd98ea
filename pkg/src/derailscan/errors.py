"""Exception hierarchy shared across the pipeline.

Two families matter to callers: ``InputError`` covers everything a user can
cause (bad files, bad config, missing tools) and maps to CLI exit code 1;
``InternalError`` signals a broken invariant inside the pipeline and maps to
exit code 2.
"""


class DerailscanError(Exception):
    """Base class for every error raised by this package."""


class InputError(DerailscanError):
    """The user supplied something we cannot work with."""


class InternalError(DerailscanError):
    """An internal invariant was violated; this is a bug, not bad input."""
