"""Error taxonomy shared by the node API, client library, and CLI.

Every error carries a stable machine-readable ``code`` that survives the
HTTP boundary: node handlers serialize it into the error envelope, the
client re-raises the matching exception class, and the CLI maps it to an
exit code.
"""

from __future__ import annotations


class QuarksError(Exception):
    """Base class for all domain errors."""

    code = "error"
    http_status = 500
    exit_code = 1

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.code)
        self.message = message or self.__class__.code


class ValidationError(QuarksError):
    """Malformed or out-of-contract input."""

    code = "validation"
    http_status = 400
    exit_code = 2


class AuthError(QuarksError):
    """Signature or certificate verification failure."""

    code = "auth"
    http_status = 401
    exit_code = 3


class AuthorizationError(QuarksError):
    """Contract guard failure: caller not in the channel ACLs."""

    code = "authorization"
    http_status = 403
    exit_code = 3


class NotFoundError(QuarksError):
    code = "not_found"
    http_status = 404
    exit_code = 4


class ConflictError(QuarksError):
    """Duplicate username, channel, or genesis."""

    code = "conflict"
    http_status = 409
    exit_code = 2


class ReplayError(QuarksError):
    """Nonce already seen inside the replay window."""

    code = "replay"
    http_status = 409
    exit_code = 3


class IntegrityError(QuarksError):
    """Ledger or snapshot fails chain verification, or an append-only
    key would be overwritten."""

    code = "integrity"
    http_status = 409
    exit_code = 1


class StateError(QuarksError):
    """Protocol step out of order (e.g. add-member step 2 without step 1)."""

    code = "state"
    http_status = 400
    exit_code = 2


class FederationError(QuarksError):
    """A peer node could not be reached or rejected a federation push."""

    code = "federation"
    http_status = 502
    exit_code = 5


class NetworkError(QuarksError):
    """Client-side transport failure."""

    code = "network"
    http_status = 503
    exit_code = 5


class GapError(QuarksError):
    """Replicated block does not extend the local head; a snapshot
    re-sync is required."""

    code = "gap"
    http_status = 409
    exit_code = 1


_BY_CODE = {
    cls.code: cls
    for cls in (
        ValidationError,
        AuthError,
        AuthorizationError,
        NotFoundError,
        ConflictError,
        ReplayError,
        IntegrityError,
        StateError,
        FederationError,
        NetworkError,
        GapError,
    )
}


def error_from_code(code: str, message: str = "") -> QuarksError:
    """Reconstruct the exception class for a wire error code."""
    cls = _BY_CODE.get(code, QuarksError)
    return cls(message)
