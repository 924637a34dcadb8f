"""Symbolic cryptography: term algebra, key directory, certificate chains.

Cryptographic operations are modeled as term constructors over a small
inductive grammar rather than as byte-level primitives. Perfect-crypto
assumptions apply throughout: a ciphertext reveals nothing without the
key, a signature cannot be minted without the private part, hashes do
not collide. Whether some party can *obtain* a term is decided by the
knowledge-closure rules in :mod:`chargesec.adversary`; this module only
defines the terms and the key/certificate bookkeeping they refer to.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Union

from .errors import ConfigError, InvalidIssuer, MissingPrivateKey

if TYPE_CHECKING:
    from .model import Role


# Single suite every surveyed protocol stack supports; scenario options may
# append one more but never replace this one.
DEFAULT_CIPHER_SUITE = "TLS_ECDHE_ECDSA_WITH_AES_128_GCM_SHA256"


# ---------------------------------------------------------------------------
# term grammar


@dataclass(frozen=True)
class Atom:
    """Public constant: labels, identifiers, anything guessable."""

    value: str


@dataclass(frozen=True)
class Secret:
    """Unguessable atom: card UIDs, static tokens, confidential payload values.

    Derivable only by parties that saw it in the clear or minted it.
    """

    value: str


@dataclass(frozen=True)
class Nonce:
    nonce_id: str


@dataclass(frozen=True)
class Pair:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Hash:
    body: "Term"


@dataclass(frozen=True)
class Enc:
    """Encryption under the key pair named by ``key_id``.

    For asymmetric pairs the public part encrypts and the private part
    decrypts; for symmetric keys the single part does both.
    """

    key_id: str
    body: "Term"


@dataclass(frozen=True)
class Sign:
    key_id: str
    body: "Term"


@dataclass(frozen=True)
class Mac:
    key_id: str
    body: "Term"


@dataclass(frozen=True)
class KeyPart:
    """Handle to one part of a named key: ``pub``, ``priv`` or ``sym``."""

    key_id: str
    part: str


Term = Union[Atom, Secret, Nonce, Pair, Hash, Enc, Sign, Mac, KeyPart]

_TAGS = {
    Atom: "atom", Secret: "secret", Nonce: "nonce", Pair: "pair",
    Hash: "hash", Enc: "enc", Sign: "sign", Mac: "mac", KeyPart: "key",
}


def pair_seq(*terms: Term) -> Term:
    """Right-fold a sequence into nested pairs. Needs at least one term."""
    if not terms:
        raise ValueError("pair_seq needs at least one term")
    out = terms[-1]
    for t in reversed(terms[:-1]):
        out = Pair(t, out)
    return out


def term_to_json(t: Term) -> dict:
    if isinstance(t, Atom):
        return {"t": "atom", "v": t.value}
    if isinstance(t, Secret):
        return {"t": "secret", "v": t.value}
    if isinstance(t, Nonce):
        return {"t": "nonce", "id": t.nonce_id}
    if isinstance(t, Pair):
        return {"t": "pair", "l": term_to_json(t.left), "r": term_to_json(t.right)}
    if isinstance(t, Hash):
        return {"t": "hash", "b": term_to_json(t.body)}
    if isinstance(t, Enc):
        return {"t": "enc", "k": t.key_id, "b": term_to_json(t.body)}
    if isinstance(t, Sign):
        return {"t": "sign", "k": t.key_id, "b": term_to_json(t.body)}
    if isinstance(t, Mac):
        return {"t": "mac", "k": t.key_id, "b": term_to_json(t.body)}
    if isinstance(t, KeyPart):
        return {"t": "key", "k": t.key_id, "p": t.part}
    raise TypeError(f"not a term: {t!r}")


def term_from_json(d: dict) -> Term:
    tag = d.get("t")
    if tag == "atom":
        return Atom(d["v"])
    if tag == "secret":
        return Secret(d["v"])
    if tag == "nonce":
        return Nonce(d["id"])
    if tag == "pair":
        return Pair(term_from_json(d["l"]), term_from_json(d["r"]))
    if tag == "hash":
        return Hash(term_from_json(d["b"]))
    if tag == "enc":
        return Enc(d["k"], term_from_json(d["b"]))
    if tag == "sign":
        return Sign(d["k"], term_from_json(d["b"]))
    if tag == "mac":
        return Mac(d["k"], term_from_json(d["b"]))
    if tag == "key":
        return KeyPart(d["k"], d["p"])
    raise ValueError(f"unknown term tag {tag!r}")


def subterms(t: Term):
    """Yield ``t`` and every nested term, outermost first."""
    yield t
    if isinstance(t, Pair):
        yield from subterms(t.left)
        yield from subterms(t.right)
    elif isinstance(t, (Hash, Enc, Sign, Mac)):
        yield from subterms(t.body)


# ---------------------------------------------------------------------------
# fresh names


class FreshNames:
    """Deterministic generator for nonces, salts, doc ids and session keys.

    Same seed, same call sequence, same names. Distinct seeds give
    distinct streams so traces from different seeds never alias.
    """

    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self._counters: dict[str, int] = {}

    def fresh(self, prefix: str) -> str:
        n = self._counters.get(prefix, 0)
        self._counters[prefix] = n + 1
        suffix = "".join(self._rng.choice("0123456789abcdef") for _ in range(6))
        return f"{prefix}{n}-{suffix}"

    def nonce(self, prefix: str = "n") -> Nonce:
        return Nonce(self.fresh(prefix))


# ---------------------------------------------------------------------------
# key directory


@dataclass(frozen=True)
class KeyInfo:
    """Directory entry for one named key or key pair."""

    key_id: str
    owner: str
    label: str
    kind: str  # "asym" | "sym"
    derived_from: tuple[str, str] | None = None  # (master key id, uid)

    @property
    def public(self) -> KeyPart:
        if self.kind != "asym":
            raise MissingPrivateKey(f"{self.key_id} has no public part")
        return KeyPart(self.key_id, "pub")

    @property
    def private(self) -> KeyPart:
        if self.kind != "asym":
            raise MissingPrivateKey(f"{self.key_id} has no private part")
        return KeyPart(self.key_id, "priv")

    @property
    def sym(self) -> KeyPart:
        if self.kind != "sym":
            raise MissingPrivateKey(f"{self.key_id} is not symmetric")
        return KeyPart(self.key_id, "sym")

    def secret_part(self) -> KeyPart:
        return self.sym if self.kind == "sym" else self.private


class KeyDirectory:
    """Registry mapping key ids to their kind, owner and derivation origin.

    The directory holds no secret material itself; possession is modeled
    by which KeyPart terms sit in an actor's or attacker's knowledge.
    """

    def __init__(self) -> None:
        self._entries: dict[str, KeyInfo] = {}

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._entries

    def get(self, key_id: str) -> KeyInfo | None:
        return self._entries.get(key_id)

    def entries(self) -> list[KeyInfo]:
        return list(self._entries.values())

    def register(self, info: KeyInfo) -> KeyInfo:
        existing = self._entries.get(info.key_id)
        if existing is not None:
            if existing != info:
                raise ConfigError(f"key id {info.key_id} registered twice with different shape")
            return existing
        self._entries[info.key_id] = info
        return info

    def keygen(self, owner: str, label: str, kind: str = "asym") -> KeyInfo:
        """Create a fresh named key. Ids are readable and deterministic
        given the construction order: ``owner.label`` with a counter when
        the pair repeats."""
        if kind not in ("asym", "sym"):
            raise ConfigError(f"key kind must be asym or sym, got {kind!r}")
        base = f"{owner}.{label}"
        key_id = base
        n = 2
        while key_id in self._entries:
            key_id = f"{base}{n}"
            n += 1
        return self.register(KeyInfo(key_id, owner, label, kind))

    def kdf_diversify(self, master_key_id: str, uid: str) -> KeyInfo:
        """Derive the per-card key for ``uid`` from a symmetric master.

        Deterministic: the same master and UID always name the same
        derived key, which is what lets a verifier recompute it and an
        attacker holding the master derive the key for any UID it knows.
        """
        master = self._entries.get(master_key_id)
        if master is None:
            raise ConfigError(f"unknown master key {master_key_id}")
        if master.kind != "sym":
            raise ConfigError(f"master key {master_key_id} is not symmetric")
        derived_id = f"{master_key_id}~{uid}"
        info = KeyInfo(derived_id, master.owner, "derived", "sym",
                       derived_from=(master_key_id, uid))
        return self.register(info)

    def decryption_part(self, key_id: str) -> KeyPart:
        """The part needed to open ``Enc(key_id, ...)``."""
        info = self._entries.get(key_id)
        if info is None or info.kind == "sym":
            # Unregistered ids are treated as symmetric so attacker-minted
            # ciphertexts still behave sanely in closure computations.
            return KeyPart(key_id, "sym")
        return KeyPart(key_id, "priv")

    def signing_part(self, key_id: str) -> KeyPart:
        info = self._entries.get(key_id)
        if info is None or info.kind == "sym":
            return KeyPart(key_id, "sym")
        return KeyPart(key_id, "priv")


# ---------------------------------------------------------------------------
# signatures


def sign(payload: Term, key: KeyInfo) -> Sign:
    """Signature of ``payload`` under the private part of ``key``.

    Callers are responsible for only signing with keys they hold; the
    engine enforces that at the points where documents are produced.
    """
    if key.kind != "asym":
        raise MissingPrivateKey(f"{key.key_id} cannot sign, use a MAC")
    return Sign(key.key_id, payload)


def verify(signature: Sign, payload: Term, key_id: str) -> bool:
    """True iff the signature is by ``key_id`` over exactly ``payload``."""
    return signature.key_id == key_id and signature.body == payload


# ---------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class TrustAnchor:
    anchor_id: str
    key_id: str


@dataclass(frozen=True)
class Certificate:
    """Binding of a subject and role to a public key, signed by the issuer.

    ``issuer_id`` names either another certificate or a trust anchor
    (``issuer_is_anchor``). The ``valid`` flag models revocation state.
    """

    cert_id: str
    subject: str
    subject_role: "Role | str"
    public_key_id: str
    issuer_id: str
    issuer_is_anchor: bool
    signature: Sign
    valid: bool = True

    def tbs_term(self) -> Term:
        """The to-be-signed content as a term."""
        role = getattr(self.subject_role, "value", self.subject_role)
        return Hash(pair_seq(Atom("cert"), Atom(self.cert_id), Atom(self.subject),
                             Atom(str(role)), KeyPart(self.public_key_id, "pub")))

    def as_term(self) -> Term:
        return Pair(self.tbs_term(), self.signature)


@dataclass
class CertStore:
    anchors: dict[str, TrustAnchor] = field(default_factory=dict)
    certs: dict[str, Certificate] = field(default_factory=dict)

    def add_anchor(self, anchor: TrustAnchor) -> None:
        self.anchors[anchor.anchor_id] = anchor

    def add(self, cert: Certificate) -> None:
        self.certs[cert.cert_id] = cert

    def get(self, cert_id: str) -> Certificate | None:
        return self.certs.get(cert_id)

    def revoke(self, cert_id: str) -> None:
        cert = self.certs[cert_id]
        self.certs[cert_id] = Certificate(
            cert.cert_id, cert.subject, cert.subject_role, cert.public_key_id,
            cert.issuer_id, cert.issuer_is_anchor, cert.signature, valid=False)

    def issuer_key_id(self, cert: Certificate) -> str | None:
        if cert.issuer_is_anchor:
            anchor = self.anchors.get(cert.issuer_id)
            return anchor.key_id if anchor else None
        issuer = self.certs.get(cert.issuer_id)
        return issuer.public_key_id if issuer else None


def issue_certificate(store: CertStore, keys: KeyDirectory, *,
                      issuer: Certificate | TrustAnchor, subject: str,
                      subject_role, public_key_id: str,
                      cert_id: str | None = None) -> Certificate:
    """Issue a certificate for ``subject`` signed by ``issuer``.

    The issuer must itself chain to an anchor with every validity flag
    set, otherwise :class:`InvalidIssuer`.
    """
    if isinstance(issuer, TrustAnchor):
        issuer_key = keys.get(issuer.key_id)
        issuer_id, is_anchor = issuer.anchor_id, True
    else:
        if not verify_chain(issuer, store):
            raise InvalidIssuer(f"issuer {issuer.cert_id} does not chain to a trusted anchor")
        issuer_key = keys.get(issuer.public_key_id)
        issuer_id, is_anchor = issuer.cert_id, False
    if issuer_key is None or issuer_key.kind != "asym":
        raise InvalidIssuer(f"issuer key missing or unusable for {issuer_id}")
    if cert_id is None:
        cert_id = f"cert:{subject}"
        n = 2
        while cert_id in store.certs:
            cert_id = f"cert:{subject}{n}"
            n += 1
    # Build the signature over the to-be-signed term. A placeholder
    # certificate computes that term first; the final object carries it.
    unsigned = Certificate(cert_id, subject, subject_role, public_key_id,
                           issuer_id, is_anchor, Sign(issuer_key.key_id, Atom("")))
    signature = sign(unsigned.tbs_term(), issuer_key)
    cert = Certificate(cert_id, subject, subject_role, public_key_id,
                       issuer_id, is_anchor, signature)
    store.add(cert)
    return cert


def verify_chain(cert: Certificate, store: CertStore,
                 trusted_anchors: set[str] | None = None) -> bool:
    """Walk issuer links up to a trust anchor, checking every signature
    and validity flag on the way.

    ``trusted_anchors`` restricts which anchors count; by default every
    anchor in the store does. A chain that bottoms out in an anchor
    outside the trusted set fails, which is how split-PKI topologies
    reject certificates from the other tree.
    """
    seen: set[str] = set()
    current = cert
    while True:
        if current.cert_id in seen:
            return False
        seen.add(current.cert_id)
        if not current.valid:
            return False
        issuer_key_id = store.issuer_key_id(current)
        if issuer_key_id is None:
            return False
        if not verify(current.signature, current.tbs_term(), issuer_key_id):
            return False
        if current.issuer_is_anchor:
            if trusted_anchors is not None and current.issuer_id not in trusted_anchors:
                return False
            return current.issuer_id in store.anchors
        current = store.certs.get(current.issuer_id)
        if current is None:
            return False


# ---------------------------------------------------------------------------
# cipher-suite policy


def approved_cipher_suites(second_suite: str | None = None) -> list[str]:
    """Suites a handshake may negotiate.

    The default list holds exactly one entry, the single suite common to
    all the surveyed stacks. Configs may add one more modern suite; they
    cannot empty the list.
    """
    suites = [DEFAULT_CIPHER_SUITE]
    if second_suite is not None:
        if not second_suite or not isinstance(second_suite, str):
            raise ConfigError("options.second_cipher_suite must be a non-empty string")
        if second_suite != DEFAULT_CIPHER_SUITE:
            suites.append(second_suite)
    return suites
