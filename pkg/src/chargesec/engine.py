"""Execution engine: world state, message transit, attacker interposition.

The world owns the wired topology, the trace builder, per-attacker
state and all session/storage bookkeeping. Flows drive it by sending
documents across links and emitting domain events; every observable
action lands in the trace with enough structure that the verdict layer
can recompute attacker knowledge from the file alone.

Two transport layers exist. Configured links carry application traffic
through the full session pipeline (handshake, client auth, network
attackers). The air interface (card to charge point, NFC) is a
proximity broadcast: no sessions, no network taps, but any physical
attacker in the field sees it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal

from . import channel
from .adversary import (
    AttackAction, AttackerKind, AttackerSpec, AttackerState, Knowledge,
    PHYSICAL_ACTIONS, act as adversary_act,
)
from .crypto import (
    Atom, Enc, KeyPart, Mac, Nonce, Pair, Secret, Sign, Term, pair_seq,
    term_from_json, term_to_json,
)
from .envelope import (
    SecuredDocument, doc_from_json, doc_term, doc_to_json, value_term,
)
from .errors import CapabilityViolation, ConfigError, InvalidTarget
from .model import (
    ClientAuth, Link, LinkMode, Role, ScenarioConfig, Topology, build_topology,
)
from .trace import TraceBuilder


@dataclass
class ChargeSession:
    session_ref: str
    charge_point: str
    presenter: str
    credential: str
    contract: str
    start_time: int
    end_time: int
    energy_kwh: Decimal
    offline: bool


@dataclass
class Delivery:
    ok: bool
    doc: SecuredDocument | None
    snapshot: dict | None
    modified: bool = False
    injected: bool = False
    reason: str = ""


def presentation_term(pres: dict) -> Term:
    """Term form of a credential presentation for knowledge bookkeeping.

    UID-bearing presentations embed the UID as a Secret: whoever sees
    the presentation in the clear learns the UID and can replay it.
    """
    kind = pres.get("kind", "")
    parts: list[Term] = [Atom(f"present:{kind}")]
    if pres.get("uid"):
        parts.append(Secret(pres["uid"]))
    if pres.get("credential"):
        parts.append(Atom(pres["credential"]))
    if pres.get("cert_id"):
        parts.append(Atom(pres["cert_id"]))
    if pres.get("nonce"):
        parts.append(Nonce(pres["nonce"]))
    for key in ("mac", "sig"):
        blob = pres.get(key)
        if blob:
            parts.append(term_from_json(blob))
    return pair_seq(*parts)


def observation_term(snapshot: dict) -> Term:
    """What a plaintext observer of this message body learns."""
    doc = doc_from_json(snapshot)
    term = doc_term(doc)
    if doc.doc_type == "auth_request":
        import json as _json
        raw = doc.disclosed_fields().get("presentation")
        if raw:
            try:
                term = Pair(term, presentation_term(_json.loads(raw)))
            except (ValueError, KeyError):
                pass
    return term


def minted_value_terms(doc_id: str, before: dict[str, str],
                       after: dict[str, str]) -> list[Term]:
    """Value terms an attacker creates by rewriting disclosed fields."""
    out = []
    for name, value in after.items():
        if before.get(name) != value:
            out.append(value_term(doc_id, name, value))
    return out


class World:
    def __init__(self, config: ScenarioConfig, seed: int | None = None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.topology: Topology = build_topology(config, self.seed)
        self.names = self.topology.names
        self.trace = TraceBuilder(config.name, self.seed, config.as_dict())
        self.attackers: dict[str, AttackerState] = {}
        self.network_taps: dict[str, list[AttackerState]] = {}
        self.compromised: dict[str, AttackerState] = {}
        self.sessions: dict[tuple[str, str], channel.Session] = {}
        self.stored: dict[tuple[str, str], dict] = {}
        self.originals: dict[str, dict] = {}
        self.last_doc_at: dict[str, dict] = {}
        self.labels: dict[str, dict] = {}  # "last_cdr" and friends -> snapshot
        self.charge_sessions: list[ChargeSession] = []
        self.replay_seen: dict[str, set[str]] = {}
        self.presentation_log: list[dict] = []
        self.clock = 0
        self.activate_attackers()

    # -- attacker lifecycle -------------------------------------------

    def activate_attackers(self) -> None:
        for cfg in self.config.attackers:
            try:
                kind = AttackerKind(cfg.kind)
            except ValueError:
                raise InvalidTarget(f"attacker {cfg.attacker_id}: unknown kind {cfg.kind!r}")
            script = tuple(
                AttackAction(s["action"], {k: v for k, v in s.items() if k != "action"})
                for s in cfg.script)
            spec = AttackerSpec(cfg.attacker_id, kind, cfg.target, script)
            state = AttackerState(spec, Knowledge(self.topology.keys))
            for cert in self.topology.certs.certs.values():
                state.knowledge.add(cert.as_term())
            learned: list[Term] = []
            if kind == AttackerKind.NETWORK:
                link = self.topology.links.get(cfg.target)
                if link is None:
                    raise InvalidTarget(
                        f"attacker {cfg.attacker_id}: network target must be a link, "
                        f"got {cfg.target!r}")
                self.network_taps.setdefault(cfg.target, []).append(state)
                token = self.topology.link_tokens.get(cfg.target)
                if token is not None and not self.config.options.secure_bootstrap:
                    # Insecure provisioning: the bearer token was handed out
                    # where the attacker could see it.
                    state.knowledge.add(token)
                    learned.append(token)
            elif kind == AttackerKind.ENDPOINT:
                if cfg.target not in self.topology.actors:
                    raise InvalidTarget(
                        f"attacker {cfg.attacker_id}: endpoint target must be an "
                        f"actor, got {cfg.target!r}")
                learned.extend(self._compromise(state, cfg.target))
            else:
                learned.extend(self._activate_physical(state, cfg))
            self.attackers[cfg.attacker_id] = state
            self.trace.append(
                "attacker_activated", attacker=cfg.attacker_id, atk_kind=kind.value,
                target=cfg.target, learned=[term_to_json(t) for t in learned],
                compromised=sorted(state.compromised))

    def _activate_physical(self, state: AttackerState, cfg) -> list[Term]:
        target_actor = self.topology.actors.get(cfg.target)
        target_cred = self.topology.credentials.get(cfg.target)
        if target_actor is None and target_cred is None:
            raise InvalidTarget(f"attacker {cfg.attacker_id}: physical target "
                                f"{cfg.target!r} is neither actor nor credential")
        learned: list[Term] = []
        while state.pending and state.pending[0].action in PHYSICAL_ACTIONS:
            action = state.pending.pop(0)
            if action.action == "read_card_uid":
                cred_id = action.params.get("credential", cfg.target)
                cred = self.topology.credentials.get(cred_id)
                if cred is None or cred.uid is None:
                    raise InvalidTarget(
                        f"read_card_uid: {cred_id!r} has no readable UID")
                state.knowledge.add(Secret(cred.uid))
                learned.append(Secret(cred.uid))
            elif action.action == "extract_master_key":
                actor = target_actor
                if actor is None or actor.master_key_id is None:
                    raise InvalidTarget(
                        f"extract_master_key: {cfg.target!r} stores no master key")
                part = KeyPart(actor.master_key_id, "sym")
                state.knowledge.add(part)
                learned.append(part)
            elif action.action == "compromise_actor":
                if target_actor is None or target_actor.role != Role.CHARGE_POINT:
                    raise InvalidTarget(
                        f"compromise_actor: physical access only reaches field "
                        f"devices, {cfg.target!r} is not a charge point")
                learned.extend(self._compromise(state, cfg.target))
        return learned

    def _compromise(self, state: AttackerState, actor_id: str) -> list[Term]:
        actor = self.topology.actor(actor_id)
        terms: list[Term] = [KeyPart(actor.sig_key_id, "priv"),
                             KeyPart(actor.enc_key_id, "priv")]
        if actor.ca_key_id:
            terms.append(KeyPart(actor.ca_key_id, "priv"))
        if actor.master_key_id:
            terms.append(KeyPart(actor.master_key_id, "sym"))
        for cred in self.topology.credentials.values():
            if cred.holder != actor_id:
                continue
            if cred.uid:
                terms.append(Secret(cred.uid))
            if cred.key_id:
                info = self.topology.keys.get(cred.key_id)
                if info is not None:
                    terms.append(info.secret_part())
        for link in self.topology.links.values():
            if actor_id in (link.a, link.b):
                token = self.topology.link_tokens.get(link.link_id)
                if token is not None:
                    terms.append(token)
        state.compromised.add(actor_id)
        self.compromised[actor_id] = state
        state.knowledge.add(*terms)
        return terms

    # -- convenience --------------------------------------------------

    def is_attacker(self, name: str) -> bool:
        return name in self.attackers

    def attacker(self, name: str) -> AttackerState:
        return self.attackers[name]

    def operator_of(self, cp_id: str) -> str | None:
        for other, _link in self.topology.neighbors(cp_id):
            if self.topology.actor(other).role == Role.CPO:
                return other
        return None

    def tick(self, minutes: int = 1) -> int:
        self.clock += minutes
        return self.clock

    # -- air interface ------------------------------------------------

    def air_event(self, participants: list[str], purpose: str,
                  terms: list[Term], flow: str, body: dict | None = None) -> int:
        """Proximity broadcast. Physical attackers in the field overhear
        everything on it, including attackers among the participants."""
        observed = []
        for state in self.attackers.values():
            if state.kind == AttackerKind.PHYSICAL or state.attacker_id in participants:
                for t in terms:
                    state.observe(t)
                observed.append(state.attacker_id)
        for actor_id in participants:
            state = self.compromised.get(actor_id)
            if state is not None:
                for t in terms:
                    state.observe(t)
                if state.attacker_id not in observed:
                    observed.append(state.attacker_id)
        return self.trace.append(
            "air", participants=participants, purpose=purpose, flow=flow,
            terms=[term_to_json(t) for t in terms], observed_by=sorted(observed),
            body=body)

    # -- document production ------------------------------------------

    def record_produced(self, doc: SecuredDocument, producer: str,
                        fields: list[tuple[str, str]], flow: str,
                        confidential: dict[str, list[str]] | None) -> int:
        snapshot = doc_to_json(doc)
        self.originals[doc.doc_id] = {
            "producer": producer, "doc_type": doc.doc_type,
            "fields": dict(fields), "confidential": confidential or {},
        }
        state = self.compromised.get(producer)
        if state is not None:
            # A compromised producer knows its own plaintext, encrypted
            # fields included.
            state.observe(observation_term(snapshot))
            for name, value in fields:
                state.observe(value_term(doc.doc_id, name, value))
        return self.trace.append(
            "produced", actor=producer, doc_id=doc.doc_id, doc_type=doc.doc_type,
            flow=flow, fields=dict(fields), confidential=confidential or {},
            mode=doc.mode.value, body=snapshot)

    # -- link transit -------------------------------------------------

    def session_for(self, link: Link, initiator: str, flow: str) -> channel.Session | None:
        key = (link.link_id, initiator)
        sess = self.sessions.get(key)
        if sess is not None and sess.open:
            return sess
        try:
            sess = channel.establish(
                self.topology, link, initiator,
                second_suite=self.config.options.second_cipher_suite)
        except Exception as exc:  # HandshakeFailure | PeerOffline
            self.trace.append("handshake", link=link.link_id, initiator=initiator,
                              ok=False, reason=str(exc), error=type(exc).__name__,
                              flow=flow)
            return None
        self.sessions[key] = sess
        self.trace.append(
            "handshake", link=link.link_id, initiator=initiator,
            responder=sess.responder, mode=sess.mode.value,
            cipher_suite=sess.cipher_suite, session=sess.session_id,
            session_key=sess.session_key_id, ok=True,
            client_auth=link.client_auth.value,
            client_authenticated=sess.client_authenticated, flow=flow)
        if link.client_auth == ClientAuth.STATIC_TOKEN:
            token = self.topology.link_tokens.get(link.link_id)
            ok = token is not None and channel.authenticate_client_static(
                self.topology, sess, token)
            self._token_transit(link, sess, initiator, token, ok, attacker=False)
        return sess

    def _token_transit(self, link: Link, sess: channel.Session | None,
                       presenter: str, token: Secret | None, ok: bool,
                       attacker: bool, rotation: bool = False) -> int:
        plain = sess is None or sess.plain
        mode = link.mode.value
        observed = []
        if token is not None:
            for state in self.network_taps.get(link.link_id, []):
                if plain:
                    state.observe(token)
                    observed.append(state.attacker_id)
                elif sess is not None and sess.session_key_id:
                    state.observe(Enc(sess.session_key_id, token))
            for end in (link.a, link.b):
                state = self.compromised.get(end)
                if state is not None:
                    state.observe(token)
        kind = "token_rotate" if rotation else "token_auth"
        return self.trace.append(
            kind, link=link.link_id, mode=mode, presenter=presenter, ok=ok,
            token=term_to_json(token) if token is not None else None,
            observed_by=observed, attacker=attacker)

    def send_doc(self, link: Link, sender: str, receiver: str,
                 doc: SecuredDocument, purpose: str, flow: str) -> Delivery:
        """Push a document across one link through the attacker pipeline."""
        sess = self.session_for(link, sender, flow)
        if sess is None:
            return Delivery(False, None, None, reason="no session")
        if (link.client_auth != ClientAuth.NONE and not sess.client_authenticated):
            self.trace.append("send_refused", link=link.link_id, sender=sender,
                              reason="client not authenticated", flow=flow)
            return Delivery(False, None, None, reason="client not authenticated")
        sess.exchanges += 1

        snapshot = doc_to_json(doc)
        meta = {"purpose": purpose, "doc_type": doc.doc_type, "sender": sender,
                "receiver": receiver, "link": link.link_id}
        taps = self.network_taps.get(link.link_id, [])
        observed = []
        for state in taps:
            term = observation_term(snapshot)
            if sess.plain:
                state.observe(term)
                state.capture(meta, snapshot, plain=True)
            else:
                state.observe(Enc(sess.session_key_id, term))
                state.capture(meta, snapshot, plain=False)
            observed.append(state.attacker_id)
        sender_state = self.compromised.get(sender)
        if sender_state is not None:
            sender_state.observe(observation_term(snapshot))

        send_idx = self.trace.append(
            "send", link=link.link_id, mode=sess.mode.value, session=sess.session_id,
            session_key=sess.session_key_id, sender=sender, receiver=receiver,
            purpose=purpose, flow=flow, body=snapshot, observed_by=observed)

        final = snapshot
        deliver = True
        modified = False
        injections: list[tuple[AttackerState, dict]] = []
        for state in taps:
            try:
                outcome = adversary_act(state, meta, final, sess.plain)
            except CapabilityViolation as exc:
                self.trace.append("attack_blocked", attacker=state.attacker_id,
                                  reason=str(exc), ref=send_idx, flow=flow)
                continue
            if not outcome.notes:
                continue
            if outcome.body_snapshot is not None:
                before = doc_from_json(final).disclosed_fields()
                final = outcome.body_snapshot
                after = doc_from_json(final).disclosed_fields()
                for t in minted_value_terms(final["doc_id"], before, after):
                    state.observe(t)
                modified = True
            if not outcome.deliver:
                deliver = False
            injections.extend((state, inj) for inj in outcome.injected)
            self.trace.append(
                "attack", attacker=state.attacker_id, notes=outcome.notes,
                ref=send_idx, flow=flow,
                body=final if modified else None)

        result: Delivery
        if deliver:
            result = self._deliver(link, sess, sender, receiver, final, purpose,
                                   flow, modified=modified, injected=False)
        else:
            self.trace.append("dropped", ref=send_idx, link=link.link_id, flow=flow)
            result = Delivery(False, None, None, modified, reason="dropped")

        for state, inj in injections:
            injected_delivery = self._deliver_injected(state, link, sess, inj, flow)
            # A drop-and-replace answers the original sender's peer in
            # place of the honest message.
            if not deliver and injected_delivery.ok:
                result = injected_delivery
        return result

    def _deliver(self, link: Link, sess: channel.Session, claimed_sender: str,
                 receiver: str, snapshot: dict, purpose: str, flow: str, *,
                 modified: bool, injected: bool,
                 attacker_id: str | None = None) -> Delivery:
        receiver_state = self.compromised.get(receiver)
        if receiver_state is not None:
            receiver_state.observe(observation_term(snapshot))
        self.last_doc_at[receiver] = snapshot
        self.trace.append(
            "deliver", link=link.link_id, mode=sess.mode.value, actor=receiver,
            sender=claimed_sender, purpose=purpose, flow=flow, body=snapshot,
            modified=modified, injected=injected, attacker=attacker_id,
            session=sess.session_id)
        return Delivery(True, doc_from_json(snapshot), snapshot, modified, injected)

    def _deliver_injected(self, state: AttackerState, link: Link,
                          sess: channel.Session, inj: dict, flow: str) -> Delivery:
        snapshot = inj.get("body_snapshot")
        if snapshot is None:
            payload_spec = inj.get("payload") or {}
            doc_id = self.names.fresh("inj")
            fields = {str(k): str(v) for k, v in payload_spec.get("fields", {}).items()}
            snapshot = {
                "doc_id": doc_id, "doc_type": payload_spec.get("doc_type", "raw"),
                "producer": inj.get("as_sender") or link.a, "recipients": [],
                "mode": "no_protection", "annotations": [], "signature": None,
                "slots": [{"name": k, "commitment": None,
                           "disclosure": {"value": v, "salt": None},
                           "confidential": []} for k, v in fields.items()],
            }
            for k, v in fields.items():
                state.observe(value_term(doc_id, k, v))
        claimed = inj.get("as_sender") or link.a
        receiver = inj.get("receiver") or (link.b if claimed == link.a else link.a)
        purpose = inj.get("purpose") or "injected"
        self.trace.append(
            "send", link=link.link_id, mode=sess.mode.value, session=sess.session_id,
            session_key=sess.session_key_id, sender=claimed, receiver=receiver,
            purpose=purpose, flow=flow, body=snapshot, observed_by=[],
            injected=True, attacker=state.attacker_id)
        return self._deliver(link, sess, claimed, receiver, snapshot, purpose,
                             flow, modified=False, injected=True,
                             attacker_id=state.attacker_id)

    # -- storage ------------------------------------------------------

    def store_document(self, actor_id: str, snapshot: dict, verified,
                       flow: str, falsified: bool = False) -> int:
        self.stored[(actor_id, snapshot["doc_id"])] = snapshot
        state = self.compromised.get(actor_id)
        if state is not None:
            state.observe(observation_term(snapshot))
        return self.trace.append(
            "store", actor=actor_id, doc_id=snapshot["doc_id"],
            doc_type=snapshot["doc_type"], body=snapshot, verified=verified,
            falsified=falsified, flow=flow)

    def stored_at(self, actor_id: str, doc_type: str) -> dict | None:
        last = None
        for (owner, _doc_id), snapshot in self.stored.items():
            if owner == actor_id and snapshot["doc_type"] == doc_type:
                last = snapshot
        return last

    # -- attacker steps outside link transit --------------------------

    def attacker_present_token(self, state: AttackerState, link_id: str) -> bool:
        link = self.topology.link(link_id)
        if link.mode == LinkMode.MUTUAL_AUTH:
            self.trace.append("attack_blocked", attacker=state.attacker_id,
                              reason="client certificate required", ref=None,
                              flow="token_probe")
            return False
        token = self.topology.link_tokens.get(link_id)
        ok = token is not None and state.knowledge.can_derive(token)
        self._token_transit(link, None, state.attacker_id,
                            token if ok else None, ok, attacker=True)
        return ok

    def rotate_token(self, link_id: str, flow: str) -> None:
        link = self.topology.link(link_id)
        fresh = channel.rotate_static_token(self.topology, link_id)
        sess = self.sessions.get((link_id, link.a)) or self.sessions.get((link_id, link.b))
        self._token_transit(link, sess, link.a, fresh, True, attacker=False,
                            rotation=True)
        # Existing sessions keep working; new ones must present the
        # replacement.
        for key, existing in list(self.sessions.items()):
            if key[0] == link_id:
                existing.client_authenticated = False
                existing.open = False
                del self.sessions[key]

    def drain_standalone_actions(self) -> None:
        """Run leftover script actions that need no triggering message."""
        for state in self.attackers.values():
            while state.pending:
                head = state.pending[0]
                if head.action == "present_token":
                    state.pending.pop(0)
                    self.attacker_present_token(
                        state, head.params.get("link", state.spec.target))
                else:
                    break
