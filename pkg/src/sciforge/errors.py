"""Exception taxonomy shared across the pipeline."""

from __future__ import annotations


class SciforgeError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SciforgeError):
    """Configuration file missing, unreadable, or failing validation."""


class TransportError(SciforgeError):
    """A live backend call failed at the transport level (retryable)."""


class ReplayMissError(SciforgeError):
    """Replay mode was asked for a request the cassette has never seen.

    Fatal by design: a miss means the pipeline drifted from its fixtures,
    and silently falling through to a live call would hide that.
    """

    def __init__(self, kind: str, key: str) -> None:
        super().__init__(f"no cassette entry for {kind} request {key}")
        self.kind = kind
        self.key = key


class FormatError(SciforgeError):
    """Model output stayed unparseable after the repair budget."""


class CurationExhaustedError(SciforgeError):
    """No usable base question could be curated from any evidence source."""


class AssessmentError(SciforgeError):
    """Every scouted source candidate was dropped during assessment."""


class SelectionError(SciforgeError):
    """No assessed source cleared the eligibility floor."""


class ExtractionError(SciforgeError):
    """Model-spec extraction failed validation after repairs."""


class CompositionError(SciforgeError):
    """Scenario composition kept violating its contract after retries."""


class FusionError(SciforgeError):
    """Question fusion would leave an anchor mention in the stem."""


class MissingMetricError(SciforgeError):
    """A judge response omitted a required scoring metric."""

    def __init__(self, metric: str) -> None:
        super().__init__(f"judge response missing metric {metric!r}")
        self.metric = metric


class DiagnosisError(SciforgeError):
    """A diagnosis judge response could not be interpreted."""
