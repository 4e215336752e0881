"""Exception types shared across the simulator."""


class FedRecError(Exception):
    """Base class for all simulator errors."""


class ParseError(FedRecError):
    """Malformed record in an interaction file."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


class EmptyDatasetError(FedRecError):
    """A load or filter step produced a dataset with no interactions."""


class NoNegativesError(FedRecError):
    """A user has interacted with every item; negative sampling impossible."""


class ConfigurationError(FedRecError):
    """Invalid configuration value or combination."""


class DimensionError(FedRecError):
    """Tensor shapes do not line up."""


class NumericError(FedRecError):
    """A non-finite value where a finite one is required."""


class ProtocolError(FedRecError):
    """Server received an invalid aggregation request."""


class ClientTrainingError(FedRecError):
    """Local training aborted (non-finite loss)."""

    def __init__(self, user_id, message, round_index=None):
        self.user_id = user_id
        self.round_index = round_index
        prefix = f"round {round_index}, " if round_index is not None else ""
        super().__init__(f"{prefix}user {user_id}: {message}")
