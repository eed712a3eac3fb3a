"""Exception taxonomy shared across the package.

The CLI maps these onto its exit-code contract: validation problems exit
with 2, transport/provider problems with 3, numerical failures with 4.
"""


class RoomsplatError(Exception):
    """Base class for all package errors."""


class ParseError(RoomsplatError):
    """A file could not be parsed (malformed layout, palette, frame...)."""


class ValidationError(RoomsplatError):
    """Parsed data violates a domain invariant; message names the entity."""


class TransportError(RoomsplatError):
    """A remote provider could not be reached (network-level failure)."""


class ContractError(RoomsplatError):
    """A remote provider answered but violated the wire/shape contract."""


class NumericalError(RoomsplatError):
    """An optimization step produced NaN/Inf parameters."""
