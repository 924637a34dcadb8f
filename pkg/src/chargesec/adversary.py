"""Attacker model: knowledge sets, deduction closure, scripted actions.

Three attacker kinds with strictly different positions:

* ``physical``: hands on a field device or card. Reads UIDs off cards,
  extracts stored master keys, or fully compromises the device (which
  escalates to endpoint capabilities on that device).
* ``endpoint``: a compromised legitimate system. Sees everything its
  host sees in the clear and may rewrite documents it forwards.
* ``network``: sits on exactly one link. On a Plain link it reads,
  modifies, injects and replays; on a TLS-protected link it only sees
  ciphertext handles and may drop traffic.

What an attacker *knows* is a term set closed under the usual deduction
rules (projection, decryption with a held key, signature stripping) and
queried with a recursive derivability check. Signatures can never be
derived without the private part, so forgery is impossible by
construction; everything else the attacker does is rearranging and
replaying material it legitimately obtained.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .crypto import (
    Atom, Enc, Hash, KeyDirectory, KeyPart, Mac, Nonce, Pair, Secret, Sign, Term,
)
from .errors import CapabilityViolation


class AttackerKind(str, Enum):
    PHYSICAL = "physical"
    ENDPOINT = "endpoint"
    NETWORK = "network"


@dataclass(frozen=True)
class AttackAction:
    """One scripted action. ``params`` is interpreted per ``action``."""

    action: str
    params: dict = field(default_factory=dict)

    def matcher(self) -> dict:
        m = self.params.get("match", {})
        return m if isinstance(m, dict) else {}


@dataclass(frozen=True)
class AttackerSpec:
    attacker_id: str
    kind: AttackerKind
    target: str
    script: tuple[AttackAction, ...] = ()


# ---------------------------------------------------------------------------
# knowledge


class Knowledge:
    """A set of terms plus the deduction rules over it.

    ``add`` grows the base set; ``can_derive`` asks whether a term is
    constructible from the closure. The closure is recomputed lazily and
    cached between additions.
    """

    def __init__(self, keys: KeyDirectory, base: Iterable[Term] = ()):
        self._keys = keys
        self._base: set[Term] = set(base)
        self._closure: set[Term] | None = None

    def add(self, *terms: Term) -> None:
        for t in terms:
            if t not in self._base:
                self._base.add(t)
                self._closure = None

    def base_terms(self) -> frozenset[Term]:
        return frozenset(self._base)

    def closure(self) -> frozenset[Term]:
        if self._closure is None:
            self._closure = self._compute_closure()
        return frozenset(self._closure)

    def _compute_closure(self) -> set[Term]:
        known: set[Term] = set(self._base)
        # Destructor fixpoint. Decryption may unlock further terms once a
        # key part becomes derivable, so iterate until nothing changes.
        while True:
            new: set[Term] = set()
            for t in known:
                if isinstance(t, Pair):
                    new.add(t.left)
                    new.add(t.right)
                elif isinstance(t, Sign):
                    # Signatures travel next to their message; treating the
                    # body as exposed only strengthens the attacker.
                    new.add(t.body)
                elif isinstance(t, Enc):
                    needed = self._keys.decryption_part(t.key_id)
                    if self._derivable(needed, known, {}):
                        new.add(t.body)
            if new <= known:
                return known
            known |= new

    def can_derive(self, term: Term) -> bool:
        return self._derivable(term, self.closure(), {})

    def _derivable(self, term: Term, known: set[Term] | frozenset[Term],
                   memo: dict[Term, bool]) -> bool:
        if term in known:
            return True
        cached = memo.get(term)
        if cached is not None:
            return cached
        memo[term] = False  # guard against accidental cycles
        out = self._synthesize(term, known, memo)
        memo[term] = out
        return out

    def _synthesize(self, term: Term, known, memo) -> bool:
        if isinstance(term, Atom):
            return True
        if isinstance(term, (Secret, Nonce)):
            return False  # unguessable unless already known
        if isinstance(term, KeyPart):
            if term.part == "pub":
                return True  # public halves are distributed
            info = self._keys.get(term.key_id)
            if info is not None and info.derived_from is not None:
                master_id, uid = info.derived_from
                return (self._derivable(KeyPart(master_id, "sym"), known, memo)
                        and self._derivable(Secret(uid), known, memo))
            return False
        if isinstance(term, Pair):
            return (self._derivable(term.left, known, memo)
                    and self._derivable(term.right, known, memo))
        if isinstance(term, Hash):
            return self._derivable(term.body, known, memo)
        if isinstance(term, Mac):
            return (self._derivable(term.body, known, memo)
                    and self._derivable(KeyPart(term.key_id, "sym"), known, memo))
        if isinstance(term, Sign):
            signing = self._keys.signing_part(term.key_id)
            return (self._derivable(term.body, known, memo)
                    and self._derivable(signing, known, memo))
        if isinstance(term, Enc):
            info = self._keys.get(term.key_id)
            if info is not None and info.kind == "asym":
                key_ok = True  # encrypting needs only the public part
            else:
                key_ok = self._derivable(KeyPart(term.key_id, "sym"), known, memo)
            return key_ok and self._derivable(term.body, known, memo)
        raise TypeError(f"not a term: {term!r}")


def can_derive(state: "AttackerState", term: Term) -> bool:
    return state.knowledge.can_derive(term)


# ---------------------------------------------------------------------------
# runtime state


@dataclass
class CapturedMessage:
    """Transit copy kept for replay. Secured-link captures hold only the
    ciphertext handle and cannot be replayed into a TLS session."""

    meta: dict
    body_snapshot: dict
    plain: bool


class AttackerState:
    def __init__(self, spec: AttackerSpec, knowledge: Knowledge):
        self.spec = spec
        self.knowledge = knowledge
        self.pending: list[AttackAction] = list(spec.script)
        self.captures: list[CapturedMessage] = []
        self.compromised: set[str] = set()

    @property
    def attacker_id(self) -> str:
        return self.spec.attacker_id

    @property
    def kind(self) -> AttackerKind:
        return self.spec.kind

    def observe(self, term: Term) -> None:
        self.knowledge.add(term)

    def capture(self, meta: dict, body_snapshot: dict, plain: bool) -> None:
        self.captures.append(CapturedMessage(dict(meta), body_snapshot, plain))

    def find_capture(self, matcher: dict) -> CapturedMessage | None:
        for cap in reversed(self.captures):
            if match_meta(matcher, cap.meta):
                return cap
        return None

    def peek_transit_action(self, meta: dict) -> AttackAction | None:
        """Head-of-script action if it applies to this transit message."""
        if not self.pending:
            return None
        head = self.pending[0]
        if head.action not in TRANSIT_ACTIONS:
            return None
        if match_meta(head.matcher(), meta):
            return head
        return None

    def consume(self, action: AttackAction) -> None:
        if self.pending and self.pending[0] is action:
            self.pending.pop(0)

    def take_named_action(self, name: str, **criteria) -> AttackAction | None:
        """Consume the head action if it carries ``name`` and its params
        match ``criteria``. Used by flows for position-specific attacks
        such as a compromised operator confirming a bogus authorization."""
        if not self.pending:
            return None
        head = self.pending[0]
        if head.action != name:
            return None
        for k, v in criteria.items():
            if k in head.params and head.params[k] != v:
                return None
        self.pending.pop(0)
        return head


TRANSIT_ACTIONS = {"eavesdrop", "drop", "modify", "inject", "replay"}
PHYSICAL_ACTIONS = {"read_card_uid", "extract_master_key", "compromise_actor"}


def match_meta(matcher: dict, meta: dict) -> bool:
    """Every key given in the matcher must equal the message metadata."""
    for k, v in matcher.items():
        if meta.get(k) != v:
            return False
    return True


# ---------------------------------------------------------------------------
# transit decisions


@dataclass
class TransitOutcome:
    deliver: bool = True
    body_snapshot: dict | None = None  # replacement body when modified
    injected: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def act(state: AttackerState, meta: dict, body_snapshot: dict,
        link_plain: bool) -> TransitOutcome:
    """Apply the attacker's head script action to one transit message.

    Raises :class:`CapabilityViolation` when the script demands content
    access on a protected link; the engine records that and delivers the
    message untouched. Dropping needs no content access and works on any
    link.
    """
    out = TransitOutcome()
    action = state.peek_transit_action(meta)
    if action is None:
        return out
    name = action.action
    if name == "eavesdrop":
        state.consume(action)
        if not link_plain:
            raise CapabilityViolation("eavesdrop on protected link yields ciphertext only")
        out.notes.append("eavesdropped")
        return out
    if name == "drop":
        state.consume(action)
        out.deliver = False
        out.notes.append("dropped")
        return out
    if name == "modify":
        state.consume(action)
        if not link_plain:
            raise CapabilityViolation("content modification on protected link")
        out.body_snapshot = apply_mutation(body_snapshot, action.params.get("mutation", {}))
        out.notes.append("modified")
        return out
    if name == "inject":
        state.consume(action)
        if not link_plain:
            raise CapabilityViolation("injection into protected session")
        if action.params.get("instead"):
            out.deliver = False
        out.injected.append({
            "payload": action.params.get("payload"),
            "as_sender": action.params.get("as_sender"),
            "receiver": action.params.get("receiver"),
            "purpose": action.params.get("purpose"),
        })
        out.notes.append("injected")
        return out
    if name == "replay":
        state.consume(action)
        if not link_plain:
            raise CapabilityViolation("replay into protected session")
        cap = state.find_capture(action.params.get("capture", {}))
        if cap is None or not cap.plain:
            raise CapabilityViolation("no replayable plaintext capture matches")
        out.injected.append({
            "body_snapshot": cap.body_snapshot,
            "as_sender": cap.meta.get("sender"),
            "receiver": cap.meta.get("receiver"),
            "purpose": cap.meta.get("purpose"),
        })
        out.notes.append("replayed")
        return out
    return out


# ---------------------------------------------------------------------------
# mutations

def apply_mutation(body_snapshot: dict, mutation: dict) -> dict:
    """Rewrite a message-body snapshot in place of the honest content.

    Snapshots are the JSON form of either a bare payload or a secured
    document. Mutations touch disclosed values and entry lists only;
    signatures and commitments are carried over verbatim, since the
    attacker cannot re-derive them.
    """
    import copy

    out = copy.deepcopy(body_snapshot)
    op = mutation.get("op")
    if op is None:
        return out
    if op == "replace_payload":
        return copy.deepcopy(mutation["body"])
    slots = out.get("slots")
    if slots is None:
        raise CapabilityViolation(f"mutation {op} needs a document body")
    if op == "set_field":
        name = mutation["field"]
        for slot in slots:
            if slot["name"] == name:
                if slot.get("disclosure") is None:
                    raise CapabilityViolation(f"field {name} is not disclosed")
                slot["disclosure"]["value"] = str(mutation["value"])
                return out
        raise CapabilityViolation(f"no field named {name}")
    if op == "remove_field":
        name = mutation["field"]
        kept = [s for s in slots if s["name"] != name]
        if len(kept) == len(slots):
            raise CapabilityViolation(f"no field named {name}")
        # Removal strips the whole slot, commitment included. Detectable
        # exactly when a signature binds the slot list.
        out["slots"] = kept
        return out
    if op == "keep_fields":
        keep = set(mutation["names"])
        out["slots"] = [s for s in slots if s["name"] in keep]
        return out
    raise CapabilityViolation(f"unknown mutation op {op!r}")
