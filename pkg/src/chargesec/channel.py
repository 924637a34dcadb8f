"""Link sessions: handshakes, cipher-suite policy, client authentication.

A session is the simulator's stand-in for a TLS connection (or the
absence of one on a Plain link). Handshakes check certificate chains
against the anchors the link trusts and refuse unapproved cipher
suites. Static bearer tokens are a separate, weaker client-auth layer
carried over whatever the link provides; rotating one means sending the
replacement across that same link.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import Secret, approved_cipher_suites, verify_chain, DEFAULT_CIPHER_SUITE
from .errors import HandshakeFailure, PeerOffline, SessionClosed
from .model import ClientAuth, Link, LinkMode, Topology


@dataclass
class Session:
    session_id: str
    link_id: str
    initiator: str
    responder: str
    mode: LinkMode
    cipher_suite: str | None
    session_key_id: str | None
    server_authenticated: bool
    client_auth: ClientAuth
    client_authenticated: bool = False
    open: bool = True
    exchanges: int = field(default=0)

    @property
    def plain(self) -> bool:
        return self.mode == LinkMode.PLAIN

    def require_open(self) -> None:
        if not self.open:
            raise SessionClosed(f"session {self.session_id} is closed")


def establish(topology: Topology, link: Link, initiator: str, *,
              second_suite: str | None = None) -> Session:
    """Open a session from ``initiator`` across ``link``.

    Raises :class:`PeerOffline` when the far end is unreachable and
    :class:`HandshakeFailure` for chain or cipher-suite problems. Plain
    links skip all of that and provide nothing.
    """
    if initiator not in (link.a, link.b):
        raise HandshakeFailure(f"{initiator} is not an endpoint of {link.link_id}")
    responder = link.b if initiator == link.a else link.a
    for end in (initiator, responder):
        if not topology.actor(end).online:
            raise PeerOffline(f"{end} is offline")

    names = topology.names
    if link.mode == LinkMode.PLAIN:
        return Session(names.fresh("sess"), link.link_id, initiator, responder,
                       link.mode, None, None, False, link.client_auth)

    suite = link.cipher_suite or DEFAULT_CIPHER_SUITE
    if suite not in approved_cipher_suites(second_suite):
        raise HandshakeFailure(f"cipher suite {suite!r} not approved on {link.link_id}")
    trusted = topology.trusted_anchor_ids(link)

    server_cert = topology.certs.get(topology.actor(responder).cert_id or "")
    if server_cert is None or not verify_chain(server_cert, topology.certs, trusted):
        raise HandshakeFailure(f"server certificate of {responder} does not chain "
                               f"to a trusted anchor on {link.link_id}")

    client_authenticated = False
    if link.mode == LinkMode.MUTUAL_AUTH:
        client_cert = topology.certs.get(topology.actor(initiator).cert_id or "")
        if client_cert is None or not verify_chain(client_cert, topology.certs, trusted):
            raise HandshakeFailure(f"client certificate of {initiator} does not chain "
                                   f"to a trusted anchor on {link.link_id}")
        client_authenticated = True

    session_key = topology.keys.keygen(f"sess:{link.link_id}", "tls", kind="sym")
    return Session(names.fresh("sess"), link.link_id, initiator, responder,
                   link.mode, suite, session_key.key_id, True, link.client_auth,
                   client_authenticated)


def authenticate_client_static(topology: Topology, session: Session,
                               token: Secret) -> bool:
    """Present a bearer token on an open session.

    The comparison is against the link's current token; a rotated-out
    token no longer matches. The caller is responsible for recording
    that the token crossed the link in whatever mode the link has.
    """
    session.require_open()
    expected = topology.link_tokens.get(session.link_id)
    ok = expected is not None and token == expected
    if ok:
        session.client_authenticated = True
    return ok


def rotate_static_token(topology: Topology, link_id: str) -> Secret:
    """Replace the link's bearer token, invalidating the old one."""
    link = topology.link(link_id)
    if link.client_auth != ClientAuth.STATIC_TOKEN:
        raise HandshakeFailure(f"link {link_id} does not use static tokens")
    fresh = Secret(topology.names.fresh(f"tok:{link_id}:"))
    topology.link_tokens[link_id] = fresh
    return fresh


def config_burden(topology: Topology) -> int:
    """Number of per-direction client-auth configurations operators must
    maintain. Push/pull pairs double it; informational only, verdicts
    never read this."""
    burden = 0
    for link in topology.links.values():
        if link.client_auth == ClientAuth.STATIC_TOKEN:
            burden += 2  # one secret to provision on each side
        elif link.client_auth == ClientAuth.CLIENT_CERTIFICATE:
            burden += 1
    return burden
