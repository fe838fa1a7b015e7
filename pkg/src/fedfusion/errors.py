"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """Invalid configuration or infeasible parameter combination."""


class DimensionError(ValueError):
    """Shape mismatch between a tensor and the layer consuming it."""


class IncompatibleParamsError(ValueError):
    """Two parameter sets do not share names, order and shapes."""


class NumericError(ArithmeticError):
    """A non-finite value appeared during a forward or loss evaluation."""


class ClientFailure(RuntimeError):
    """A client failed during local training; carries round and client id."""

    def __init__(self, round_idx: int, client_id: int, cause: BaseException):
        super().__init__(f"client {client_id} failed in round {round_idx}: {cause}")
        self.round_idx = round_idx
        self.client_id = client_id
        self.cause = cause
