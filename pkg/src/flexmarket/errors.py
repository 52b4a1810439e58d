"""Exception types shared across the package."""


class FlexMarketError(Exception):
    """Base class for all errors raised by this package."""


class InputError(FlexMarketError):
    """A file or record failed schema validation."""


class NetworkError(FlexMarketError):
    """The network description is structurally invalid."""


class UnknownBusError(NetworkError):
    """A bus id does not exist in the network or dispatch."""


class InfeasibleBaselineError(FlexMarketError):
    """The baseline dispatch violates at least one line limit."""


class MarketError(FlexMarketError):
    """A bid or market operation violates the trading rules."""


class CombinationLimitError(MarketError):
    """Too many accepted conditional matches for exhaustive checking."""
