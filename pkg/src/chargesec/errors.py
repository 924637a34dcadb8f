"""Exception vocabulary shared across the package.

Everything a scenario can legitimately trip over derives from
:class:`ChargesecError` so the CLI can map any of it to exit code 1.
Errors raised mid-simulation that represent *attacker* limitations
(``CapabilityViolation``) are caught by the engine and recorded in the
trace instead of aborting the run.
"""

from __future__ import annotations


class ChargesecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ChargesecError):
    """A scenario file is malformed; the message names the offending key."""


# --- topology construction -------------------------------------------------

class DuplicateActorId(ConfigError):
    pass


class DanglingLinkEndpoint(ConfigError):
    pass


class DuplicateContractId(ConfigError):
    pass


class AmbiguousContract(ChargesecError):
    """Two valid contracts reference the same credential."""


# --- key and certificate handling ------------------------------------------

class InvalidIssuer(ChargesecError):
    """Certificate issuance attempted from a revoked or untrusted issuer."""


class MissingPrivateKey(ChargesecError):
    pass


class MissingKey(ChargesecError):
    """An envelope operation needs key material the caller does not hold."""


# --- channels ---------------------------------------------------------------

class HandshakeFailure(ChargesecError):
    pass


class PeerOffline(ChargesecError):
    pass


class SessionClosed(ChargesecError):
    pass


class NotAuthenticated(ChargesecError):
    pass


# --- envelopes --------------------------------------------------------------

class DuplicateFieldName(ChargesecError):
    pass


class UnknownField(ChargesecError):
    pass


class AccessDenied(ChargesecError):
    """Field is redacted, or the reader is not an authorised recipient."""


# --- adversary --------------------------------------------------------------

class InvalidTarget(ConfigError):
    """Attacker target does not exist or does not fit the attacker kind."""


class CapabilityViolation(ChargesecError):
    """Script demands an action the attacker's position does not permit,
    e.g. content modification on a TLS-protected link."""


# --- flows ------------------------------------------------------------------

class InfeasibleAllocation(ChargesecError):
    """Capacity split cannot satisfy the per-point minimum."""


# --- traces -----------------------------------------------------------------

class IncompleteTrace(ChargesecError):
    """Trace lacks its header or terminating record."""


class CorruptTrace(ChargesecError):
    """Trace indices are not dense or a record fails to decode."""
