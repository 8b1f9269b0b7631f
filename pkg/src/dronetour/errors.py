"""Exception types shared across the toolkit."""


class DronetourError(Exception):
    """Base class for all toolkit errors."""


class NoPathError(DronetourError):
    """No ground or air route exists between the requested endpoints."""


class NoRendezvousError(DronetourError):
    """The drone cannot land on the truck within the planning horizon."""


class InfeasibleEnergyError(DronetourError):
    """A trajectory needs more energy than the battery can deliver."""


class BandError(DronetourError):
    """A state falls outside the tabulated power-band envelope."""


class HorizonTooShortError(DronetourError):
    """The requested model horizon cannot contain the flight."""


class SizeError(DronetourError):
    """Exhaustive planning was requested for an instance that is too large."""


class EmptyDatasetError(DronetourError):
    """A dataset operation needs at least one usable row."""


class DivergenceError(DronetourError):
    """Training produced a non-finite loss."""


class ModelFormatError(DronetourError):
    """A serialized model file is malformed or has an unsupported version."""


class SamplingError(DronetourError):
    """Rejection sampling exhausted its retry budget."""
