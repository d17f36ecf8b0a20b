"""Exception taxonomy shared across the package.

Every error raised on a contract violation derives from StratinvError so
callers (and the CLI) can tell usage errors from genuine bugs.
"""

from __future__ import annotations


class StratinvError(Exception):
    """Base class for all package-specific errors."""


# --- finite models ----------------------------------------------------------


class EnumerationTooLarge(StratinvError):
    """World enumeration would exceed the configured cap."""


class DomainMismatch(StratinvError):
    """A value does not belong to the declared finite domain."""


class InconsistentEvidence(StratinvError):
    """No positive-mass world is consistent with the given evidence."""


# --- graphs -----------------------------------------------------------------


class GraphError(StratinvError):
    """Structurally invalid graph (cycles, duplicate nodes, bad marks)."""


class UnknownNode(StratinvError):
    """A query referenced a node that is not in the graph."""


# --- metrics ----------------------------------------------------------------


class EmptyCell(StratinvError):
    """A required (stratum, context) cell has no records."""


class NonBinaryLabel(StratinvError):
    """A strictly binary metric was given more than two label values."""


class ZeroMassStratum(StratinvError):
    """Conditioning on a stratum with zero probability mass."""


class MissingCell(StratinvError):
    """A potential-prediction grid is missing a (context, profile) entry."""


class MissingLabels(StratinvError):
    """Records lack the true label or the prediction a metric needs."""


class BalanceError(StratinvError):
    """A balanced subsample cannot be formed at the requested size."""


class MissingBaseline(StratinvError):
    """A comparison table lacks the baseline method it must subtract from."""


# --- augmentation -----------------------------------------------------------


class AmbiguousContext(StratinvError):
    """The context recoverer could not pin down a unique context."""


class SamplerFailure(StratinvError):
    """The conditional input sampler failed to produce a draw."""


# --- chat / prompting -------------------------------------------------------


class ServiceError(StratinvError):
    """The chat completion service failed after retries."""


class TemplateError(StratinvError):
    """A prompt template was rendered with unresolved placeholders."""


class UnparsableAnswer(StratinvError):
    """A completion could not be mapped to any label, even after retry."""


class UnrecognizedRole(StratinvError):
    """The mock model received a prompt with no recognized role marker."""


class OocFailed(StratinvError):
    """Every replicate of a context-randomized prediction failed."""
