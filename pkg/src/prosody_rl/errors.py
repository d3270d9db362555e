"""Exception and warning types shared across the toolkit."""


class ProsodyRlError(Exception):
    """Base class for all toolkit errors."""


# --- audio / prosody ---

class EmptyInput(ProsodyRlError):
    """An operation received an empty frame or buffer."""


class InvalidParams(ProsodyRlError):
    """Parameters violate a documented precondition."""


class UnmatchedLabel(ProsodyRlError):
    """A word label could not be matched to any voiced region."""

    def __init__(self, labels):
        self.labels = list(labels)
        super().__init__(f"no voiced region within 1.0 s of labels: {self.labels}")


class DegenerateBaseline(ProsodyRlError):
    """Speaker baseline has zero variance in at least one feature."""


class AudioFormatError(ProsodyRlError):
    """Unsupported audio container or encoding (only 16-bit PCM mono WAV)."""


class VoicelessUtteranceWarning(UserWarning):
    """All frames of an utterance were unvoiced; pitch fields set to 0."""


# --- gridworld ---

class InfeasibleMap(ProsodyRlError):
    """Map generation failed or the goal is unreachable."""


class StateNotFound(ProsodyRlError):
    """Query for a state outside the solved state set."""


# --- tamer / sessions ---

class InvalidSession(ProsodyRlError):
    """Session streams are not sorted or are mutually inconsistent."""


# --- reward learning ---

class ShapeError(ProsodyRlError):
    """Input dimensions do not match the network."""


# --- statistics ---

class InsufficientData(ProsodyRlError):
    """Too few samples for the requested analysis."""


class DegenerateRanking(ProsodyRlError):
    """Constant input makes a rank statistic undefined."""


class DegenerateGroups(ProsodyRlError):
    """A two-group statistic received fewer than two groups."""


class InvalidExpected(ProsodyRlError):
    """Chi-square expected counts must all be positive."""


# --- io / replay / service ---

class FormatVersionError(ProsodyRlError):
    """File declares an unsupported major format version."""


class ReplayError(ProsodyRlError):
    """A session log row could not be replayed."""

    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class NoBaseline(ProsodyRlError):
    """Audio feedback arrived before a speaker baseline was recorded."""
