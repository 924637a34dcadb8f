"""Message protection envelopes and their verification.

Three modes, uniform field-slot layout:

* ``no_protection``: plaintext slots, no signature. Anything can be
  changed or deleted without trace.
* ``whole_message_signature``: one signature over every field value.
  Tamper-evident, but all-or-nothing: removing any field (for privacy
  or otherwise) invalidates the whole document.
* ``selective_disclosure``: each field carried as a salted hash
  commitment, the signature covers the commitment list. Disclosures
  (value plus salt) can be removed per field by any intermediary while
  the signature stays verifiable, and fields can be encrypted to
  individual recipients.

Redaction keeps commitments in place, so a verifier can tell a
legitimately redacted field from a silently deleted one. Without the
salt, a commitment does not let anyone confirm a guessed value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .crypto import (
    Atom, Enc, FreshNames, Hash, Nonce, Pair, Secret, Sign, Term,
    pair_seq, sign, term_from_json, term_to_json, verify, verify_chain,
)
from .errors import AccessDenied, DuplicateFieldName, MissingKey, UnknownField
from .model import Payload, Protection, Topology


def value_term(doc_id: str, name: str, value: str) -> Secret:
    """Term standing for one field value of one concrete document.

    Tagged per document instance: the same literal in two documents is
    two distinct terms, so derivability of this term means this field
    of this document was actually readable, not that the reader could
    guess the number.
    """
    return Secret("fv:" + json.dumps([doc_id, name, value], separators=(",", ":")))


def value_from_term(t: Term) -> str | None:
    if isinstance(t, Secret) and t.value.startswith("fv:"):
        return json.loads(t.value[3:])[2]
    return None


@dataclass(frozen=True)
class Disclosure:
    value: str
    salt: Nonce | None  # selective disclosure carries one salt per field


@dataclass(frozen=True)
class FieldSlot:
    name: str
    commitment: Hash | None
    disclosure: Disclosure | None
    confidential: tuple[tuple[str, Enc], ...] = ()

    def confidential_for(self, reader: str) -> Enc | None:
        for recipient, blob in self.confidential:
            if recipient == reader:
                return blob
        return None


@dataclass(frozen=True)
class DocumentHeader:
    doc_id: str
    doc_type: str
    producer: str
    recipients: tuple[str, ...]

    def as_term(self) -> Term:
        return pair_seq(Atom("doc"), Atom(self.doc_id), Atom(self.doc_type),
                        Atom(self.producer), Atom(",".join(self.recipients)))


@dataclass(frozen=True)
class SecuredDocument:
    header: DocumentHeader
    mode: Protection
    slots: tuple[FieldSlot, ...]
    signature: Sign | None
    annotations: tuple[str, ...] = ()

    @property
    def doc_id(self) -> str:
        return self.header.doc_id

    @property
    def doc_type(self) -> str:
        return self.header.doc_type

    def slot(self, name: str) -> FieldSlot:
        for s in self.slots:
            if s.name == name:
                return s
        raise UnknownField(f"document {self.doc_id} has no field {name!r}")

    def disclosed_fields(self) -> dict[str, str]:
        return {s.name: s.disclosure.value for s in self.slots
                if s.disclosure is not None}


@dataclass(frozen=True)
class VerificationResult:
    ok: bool
    producer: str | None
    reason: str  # "", "no signature", "bad signature", "commitment mismatch", "bad chain"


@dataclass(frozen=True)
class OriginEvidence:
    repudiable: bool
    producer: str | None
    reason: str


# ---------------------------------------------------------------------------
# construction


def _commitment(doc_id: str, name: str, salt: Nonce, value: str) -> Hash:
    return Hash(pair_seq(Atom("field"), Atom(name), salt,
                         value_term(doc_id, name, value)))


def _signature_input(doc: SecuredDocument) -> Term | None:
    """What the producer's signature covers, rebuilt from present slots.

    Returns None when the present slots cannot produce a well-formed
    input (a deleted commitment, an undisclosed field under whole-message
    signing). Callers treat that as a failed verification.
    """
    parts: list[Term] = [doc.header.as_term(), Atom(doc.mode.value)]
    if doc.mode == Protection.WHOLE_MESSAGE:
        for s in doc.slots:
            if s.disclosure is None:
                return None
            parts.append(Pair(Atom(s.name),
                              value_term(doc.doc_id, s.name, s.disclosure.value)))
    elif doc.mode == Protection.SELECTIVE:
        for s in doc.slots:
            if s.commitment is None:
                return None
            parts.append(s.commitment)
    else:
        return None
    return Hash(pair_seq(*parts))


def signer_key_for(topology: Topology, producer: str) -> tuple[str, str | None] | None:
    """Signing key and certificate for an actor or a credential."""
    actor = topology.actors.get(producer)
    if actor is not None:
        return actor.sig_key_id, actor.cert_id
    cred = topology.credentials.get(producer)
    if cred is not None and cred.key_id is not None and cred.cert_id is not None:
        return cred.key_id, cred.cert_id
    return None


def protect(payload: Payload, producer: str, mode: Protection, *,
            topology: Topology, names: FreshNames,
            recipients: tuple[str, ...] = (),
            confidential: dict[str, list[str]] | None = None) -> SecuredDocument:
    """Wrap a payload for transmission under the given protection mode.

    ``confidential`` maps field names to the actor ids allowed to read
    them; honoured only by selective disclosure, since the other modes
    have no per-field machinery.
    """
    payload.validate()
    fields = payload.fields()
    seen: set[str] = set()
    for name, _ in fields:
        if name in seen:
            raise DuplicateFieldName(f"payload repeats field {name!r}")
        seen.add(name)
    confidential = confidential or {}
    for name in confidential:
        if name not in seen:
            raise UnknownField(f"confidential policy names unknown field {name!r}")

    header = DocumentHeader(names.fresh("doc"), payload.doc_type, producer, tuple(recipients))
    slots: list[FieldSlot] = []
    for name, value in fields:
        if mode == Protection.SELECTIVE:
            salt = names.nonce("salt")
            commitment = _commitment(header.doc_id, name, salt, value)
            readers = confidential.get(name)
            if readers is None:
                slot = FieldSlot(name, commitment, Disclosure(value, salt))
            else:
                blobs = []
                for reader in readers:
                    actor = topology.actors.get(reader)
                    if actor is None:
                        raise MissingKey(f"confidential field {name!r}: no encryption "
                                         f"key for recipient {reader!r}")
                    body = Pair(salt, value_term(header.doc_id, name, value))
                    blobs.append((reader, Enc(actor.enc_key_id, body)))
                slot = FieldSlot(name, commitment, None, tuple(blobs))
            slots.append(slot)
        else:
            slots.append(FieldSlot(name, None, Disclosure(value, None)))

    signature = None
    if mode != Protection.NONE:
        key = signer_key_for(topology, producer)
        if key is None:
            raise MissingKey(f"producer {producer!r} holds no signing key")
        doc = SecuredDocument(header, mode, tuple(slots), None)
        body = _signature_input(doc)
        signature = sign(body, topology.keys.get(key[0]))
    return SecuredDocument(header, mode, tuple(slots), signature)


def redact(doc: SecuredDocument, name: str) -> SecuredDocument:
    """Remove a field's content while keeping the document verifiable
    where the mode allows it.

    Selective disclosure keeps the commitment; whole-message signing
    keeps the slot but the document will no longer verify; unprotected
    documents simply lose the slot.
    """
    doc.slot(name)  # raises UnknownField
    if doc.mode == Protection.NONE:
        slots = tuple(s for s in doc.slots if s.name != name)
    else:
        slots = tuple(
            replace(s, disclosure=None, confidential=()) if s.name == name else s
            for s in doc.slots)
    return replace(doc, slots=slots)


# ---------------------------------------------------------------------------
# verification


def verify_document(doc: SecuredDocument, topology: Topology,
                    trusted_anchors: set[str] | None = None) -> VerificationResult:
    producer = doc.header.producer
    if doc.mode == Protection.NONE or doc.signature is None:
        return VerificationResult(False, None, "no signature")
    key = signer_key_for(topology, producer)
    if key is None:
        return VerificationResult(False, None, "bad chain")
    key_id, cert_id = key
    cert = topology.certs.get(cert_id) if cert_id else None
    if cert is None or not verify_chain(cert, topology.certs, trusted_anchors):
        return VerificationResult(False, None, "bad chain")

    if doc.mode == Protection.SELECTIVE:
        for s in doc.slots:
            if s.commitment is None:
                return VerificationResult(False, None, "commitment mismatch")
            if s.disclosure is not None:
                if s.disclosure.salt is None:
                    return VerificationResult(False, None, "commitment mismatch")
                recomputed = _commitment(doc.doc_id, s.name, s.disclosure.salt,
                                         s.disclosure.value)
                if recomputed != s.commitment:
                    return VerificationResult(False, None, "commitment mismatch")

    body = _signature_input(doc)
    if body is None or not verify(doc.signature, body, key_id):
        return VerificationResult(False, None, "bad signature")
    return VerificationResult(True, producer, "")


def prove_origin(doc: SecuredDocument, topology: Topology) -> OriginEvidence:
    """Can a third party pin this document on its producer?

    Requires a verifiable signature chained to a trust anchor. Anything
    less and the producer can deny authorship.
    """
    result = verify_document(doc, topology)
    if result.ok:
        return OriginEvidence(False, result.producer, "")
    return OriginEvidence(True, None, result.reason or "unverifiable")


def decrypt_field(doc: SecuredDocument, name: str, reader: str,
                  topology: Topology) -> str:
    """Read one field as ``reader``. Plain disclosures are open to all;
    encrypted fields only to their listed recipients; redacted fields to
    nobody."""
    slot = doc.slot(name)
    if slot.disclosure is not None:
        return slot.disclosure.value
    blob = slot.confidential_for(reader)
    if blob is None:
        raise AccessDenied(f"field {name!r} of {doc.doc_id} is not readable by {reader!r}")
    body = blob.body
    if isinstance(body, Pair):
        raw = value_from_term(body.right)
        if raw is not None:
            return raw
    raise AccessDenied(f"field {name!r} of {doc.doc_id} carries no readable value")


# ---------------------------------------------------------------------------
# terms and snapshots


def doc_term(doc: SecuredDocument) -> Term:
    """Everything an observer of the wire sees of this document, as one
    term for knowledge bookkeeping."""
    parts: list[Term] = [doc.header.as_term(), Atom(doc.mode.value)]
    for s in doc.slots:
        slot_parts: list[Term] = [Atom("slot"), Atom(s.name)]
        if s.commitment is not None:
            slot_parts.append(s.commitment)
        if s.disclosure is not None:
            if s.disclosure.salt is not None:
                slot_parts.append(s.disclosure.salt)
            slot_parts.append(value_term(doc.doc_id, s.name, s.disclosure.value))
        for _, blob in s.confidential:
            slot_parts.append(blob)
        parts.append(pair_seq(*slot_parts))
    if doc.signature is not None:
        parts.append(doc.signature)
    return pair_seq(*parts)


def doc_to_json(doc: SecuredDocument) -> dict:
    return {
        "doc_id": doc.header.doc_id,
        "doc_type": doc.header.doc_type,
        "producer": doc.header.producer,
        "recipients": list(doc.header.recipients),
        "mode": doc.mode.value,
        "annotations": list(doc.annotations),
        "signature": term_to_json(doc.signature) if doc.signature else None,
        "slots": [
            {
                "name": s.name,
                "commitment": term_to_json(s.commitment) if s.commitment else None,
                "disclosure": (
                    {"value": s.disclosure.value,
                     "salt": term_to_json(s.disclosure.salt) if s.disclosure.salt else None}
                    if s.disclosure else None),
                "confidential": [[r, term_to_json(b)] for r, b in s.confidential],
            }
            for s in doc.slots
        ],
    }


def doc_from_json(d: dict) -> SecuredDocument:
    header = DocumentHeader(d["doc_id"], d["doc_type"], d["producer"],
                            tuple(d.get("recipients", ())))
    slots = []
    for s in d["slots"]:
        disclosure = None
        if s.get("disclosure") is not None:
            salt = s["disclosure"].get("salt")
            disclosure = Disclosure(s["disclosure"]["value"],
                                    term_from_json(salt) if salt else None)
        slots.append(FieldSlot(
            s["name"],
            term_from_json(s["commitment"]) if s.get("commitment") else None,
            disclosure,
            tuple((r, term_from_json(b)) for r, b in s.get("confidential", ())),
        ))
    sig = d.get("signature")
    return SecuredDocument(header, Protection(d["mode"]), tuple(slots),
                           term_from_json(sig) if sig else None,
                           tuple(d.get("annotations", ())))


def is_document_snapshot(body: dict) -> bool:
    return isinstance(body, dict) and "slots" in body and "doc_id" in body
