"""Protocol flows driven over the engine.

Each flow mirrors one interaction pattern of the charging ecosystem:
driver authorization in its four variants, tariff distribution with
rate selection, billing-record delivery and storage, capacity
forecasting with equal-split allocation, firmware updates, NFC-relayed
offline sessions, document format conversion, and the storage-side
operations (falsification probes, privacy redaction, token rotation).

Flows take the scenario step dict as keyword-ish input and write
everything observable to the trace; their return values exist for unit
tests, the verdict layer never sees them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal, ROUND_DOWN

from . import envelope
from .adversary import AttackerState
from .crypto import Mac, Nonce, Secret, Sign, term_from_json, term_to_json, verify_chain
from .engine import ChargeSession, Delivery, World
from .errors import (
    CapabilityViolation, ConfigError, InfeasibleAllocation,
)
from .model import (
    AuthDecision, AuthRelay, CapacityForecast, ChargeDetailRecord, ChargeProfile,
    FirmwareImage, ForecastSlot, MeterReading, Payload, ProfileSlot,
    Protection, QUANTUM, Role, SelectedRate, SessionDescription, TariffEntry,
    TariffTable, as_amount, lookup_contract, payload_from_fields,
)


@dataclass
class AuthResult:
    granted: bool
    reason: str
    mechanism: str
    credential: str = ""
    contract: str = ""
    session_ref: str = ""
    decision_source: str = "local"
    offline: bool = False
    event_index: int = -1


# ---------------------------------------------------------------------------
# shared helpers


def _protection(world: World, step: dict, key: str = "protection") -> Protection:
    raw = step.get(key)
    return Protection(raw) if raw else world.config.protection


def _wrap(world: World, payload: Payload, producer: str, mode: Protection, *,
          recipients: tuple[str, ...] = (),
          confidential: dict[str, list[str]] | None = None) -> envelope.SecuredDocument:
    return envelope.protect(payload, producer, mode, topology=world.topology,
                            names=world.names, recipients=recipients,
                            confidential=confidential)


def _control_wrap(world: World, payload: Payload, producer: str) -> envelope.SecuredDocument:
    """Control-plane messages travel unprotected; channel security is
    their only shield, which is exactly the point under test."""
    return envelope.protect(payload, producer, Protection.NONE,
                            topology=world.topology, names=world.names)


def _resolve_confidential(world: World, doc_type: str,
                          fields: list[tuple[str, str]],
                          subs: dict[str, str]) -> dict[str, list[str]] | None:
    policy = world.config.confidential.get(doc_type)
    if not policy:
        return None
    wanted = policy.get("fields", [])
    recipients = [subs.get(r, r) for r in policy.get("recipients", [])]
    out: dict[str, list[str]] = {}
    for name, _ in fields:
        for pattern in wanted:
            if pattern == name or (pattern.endswith("*") and name.startswith(pattern[:-1])):
                out[name] = recipients
                break
    return out or None


def _link_for_hop(world: World, a: str, b: str):
    link = world.topology.link_between(a, b)
    if link is None:
        raise ConfigError(f"no link between {a!r} and {b!r}")
    return link


def _endpoint_forward_hook(world: World, actor: str,
                           doc: envelope.SecuredDocument,
                           flow: str) -> envelope.SecuredDocument:
    """A compromised forwarder may rewrite the document before passing
    it on. The signature is carried over verbatim either way."""
    state = world.compromised.get(actor)
    if state is None:
        return doc
    snapshot = envelope.doc_to_json(doc)
    mutated = None
    action = state.take_named_action("filter_entries", doc_type=doc.doc_type)
    if action is not None:
        keep = action.params.get("keep", [])
        names = [s.name for s in doc.slots if not s.name.startswith("entry")]
        names += [f"entry{i}" for i in keep]
        mutated = {"op": "keep_fields", "names": names}
    if mutated is None:
        action = state.take_named_action("set_field", doc_type=doc.doc_type)
        if action is not None:
            mutated = {"op": "set_field", "field": action.params["field"],
                       "value": action.params["value"]}
    if mutated is None:
        action = state.take_named_action("remove_field", doc_type=doc.doc_type)
        if action is not None:
            mutated = {"op": "remove_field", "field": action.params["field"]}
    if mutated is None:
        return doc
    from .adversary import apply_mutation
    try:
        new_snapshot = apply_mutation(snapshot, mutated)
    except CapabilityViolation as exc:
        world.trace.append("attack_blocked", attacker=state.attacker_id,
                           reason=str(exc), ref=None, flow=flow)
        return doc
    before = doc.disclosed_fields()
    new_doc = envelope.doc_from_json(new_snapshot)
    from .engine import minted_value_terms
    for t in minted_value_terms(doc.doc_id, before, new_doc.disclosed_fields()):
        state.observe(t)
    world.trace.append("attack", attacker=state.attacker_id,
                       notes=[f"endpoint:{mutated['op']}"], ref=None, flow=flow,
                       body=new_snapshot)
    return new_doc


def _forward_chain(world: World, doc: envelope.SecuredDocument, path: list[str],
                   purpose: str, flow: str,
                   redact_at: dict | None = None) -> Delivery | None:
    """Hop-by-hop forwarding along an actor path. Returns the delivery
    at the final hop, or None when any hop failed."""
    current = doc
    delivery: Delivery | None = None
    for a, b in zip(path, path[1:]):
        if a != path[0]:
            current = _endpoint_forward_hook(world, a, current, flow)
            if redact_at and redact_at.get("actor") == a:
                current = envelope.redact(current, redact_at["field"])
                check = envelope.verify_document(current, world.topology)
                world.trace.append(
                    "redact", actor=a, doc_id=current.doc_id, field=redact_at["field"],
                    in_transit=True, mode=current.mode.value,
                    verifies_after=check.ok, flow=flow)
        link = _link_for_hop(world, a, b)
        delivery = world.send_doc(link, a, b, current, purpose, flow)
        if not delivery.ok:
            return None
        current = delivery.doc
    return delivery


def _accept(world: World, actor: str, delivery: Delivery, flow: str) -> tuple[bool | None, str]:
    """Final-recipient verification. Returns (verified, reason) where
    verified is None for unprotected documents (consumed on faith)."""
    doc = delivery.doc
    verified: bool | None
    reason = ""
    if doc.mode == Protection.NONE:
        if world.config.protection != Protection.NONE:
            # Deployments that mandate protection refuse bare documents;
            # otherwise injecting plaintext would sidestep every check.
            verified, reason = False, "unprotected document where protection is required"
        else:
            verified = None
    else:
        result = envelope.verify_document(doc, world.topology)
        verified, reason = result.ok, result.reason
    world.trace.append(
        "accepted", actor=actor, doc_id=doc.doc_id, doc_type=doc.doc_type,
        verified=verified, reason=reason, fields=doc.disclosed_fields(),
        commitments=[s.name for s in doc.slots if s.commitment is not None],
        mode=doc.mode.value, modified=delivery.modified, injected=delivery.injected,
        flow=flow, body=delivery.snapshot)
    return verified, reason


def _floor3(value: Decimal) -> Decimal:
    return value.quantize(QUANTUM, rounding=ROUND_DOWN)


# ---------------------------------------------------------------------------
# authorization


def authorize(world: World, step: dict) -> AuthResult:
    mechanism = step.get("mechanism", "")
    if mechanism not in ("uid", "symmetric_cr", "asymmetric_cr", "online"):
        raise ConfigError(f"authorize: unknown mechanism {mechanism!r}")
    cp = world.topology.actor(step["charge_point"])
    presenter = step["presenter"]
    attacker = world.attackers.get(presenter)
    cred = world.topology.credentials.get(step.get("credential", ""))
    if attacker is None:
        if cred is None:
            raise ConfigError("authorize: honest presenter needs a credential")
        if cred.holder != presenter:
            raise ConfigError(f"authorize: {presenter!r} does not hold "
                              f"{cred.credential_id!r}")
    flow = world.names.fresh("auth")

    handler = {"uid": _auth_uid, "symmetric_cr": _auth_symmetric,
               "asymmetric_cr": _auth_asymmetric, "online": _auth_online}[mechanism]
    result = handler(world, step, cp, presenter, attacker, cred, flow)
    result.mechanism = mechanism
    result.event_index = world.trace.append(
        "auth", mechanism=mechanism, charge_point=cp.actor_id, presenter=presenter,
        attacker=attacker is not None, granted=result.granted, reason=result.reason,
        credential=result.credential, contract=result.contract,
        decision_source=result.decision_source, offline=result.offline, flow=flow)
    if result.granted and step.get("charge", True):
        _energy(world, cp.actor_id, presenter, result, step, flow)
    return result


def _resolve_uid(world: World, attacker: AttackerState | None, cred,
                 step: dict) -> tuple[str | None, str]:
    """Which UID gets presented, and can the presenter actually produce it.

    Honest drivers present their card's UID. Attackers either clone a
    real UID they learned (checked against their knowledge) or mint an
    arbitrary one of their own.
    """
    if attacker is None:
        return cred.uid, "own card"
    if "uid_literal" in step:
        uid = str(step["uid_literal"])
        attacker.knowledge.add(Secret(uid))  # the attacker knows its own choice
        return uid, "minted"
    source = world.topology.credentials.get(step.get("uid_of", ""))
    if source is None or source.uid is None:
        return None, "no such credential"
    if not attacker.knowledge.can_derive(Secret(source.uid)):
        return None, "uid not derivable"
    return source.uid, "cloned"


def _auth_uid(world: World, step, cp, presenter, attacker, cred, flow) -> AuthResult:
    uid, how = _resolve_uid(world, attacker, cred, step)
    if uid is None:
        world.trace.append("attack_blocked", attacker=presenter, reason=how,
                           ref=None, flow=flow)
        return AuthResult(False, how, "uid")
    world.air_event([presenter, cp.actor_id], "uid_broadcast", [Secret(uid)], flow)
    presentation = {"kind": "uid", "uid": uid}
    operator = world.operator_of(cp.actor_id)
    offline = not cp.online

    if offline or operator is None:
        wl = world.topology.whitelist(operator) if operator else set()
        granted = uid in wl
        contract = lookup_contract(world.topology, presentation)
        return AuthResult(granted,
                          "whitelisted" if granted else "uid not on whitelist",
                          "uid", credential=_cred_id_for_uid(world, uid),
                          contract=contract.contract_id if contract and granted else "",
                          decision_source="local", offline=offline)

    decision, source = _backhaul_decision(world, cp, operator, presentation, flow,
                                          "auth_lookup")
    if decision is None:
        return AuthResult(False, "backhaul unreachable", "uid",
                          decision_source="transport", offline=offline)
    return AuthResult(decision.granted, decision.reason, "uid",
                      credential=decision.credential, contract=decision.contract,
                      decision_source=source, offline=offline)


def _auth_symmetric(world: World, step, cp, presenter, attacker, cred, flow) -> AuthResult:
    if cp.master_key_id is None:
        return AuthResult(False, "charge point has no master key", "symmetric_cr")
    uid, how = _resolve_uid(world, attacker, cred, step)
    if uid is None:
        world.trace.append("attack_blocked", attacker=presenter, reason=how,
                           ref=None, flow=flow)
        return AuthResult(False, how, "symmetric_cr")
    world.air_event([presenter, cp.actor_id], "uid_broadcast", [Secret(uid)], flow)
    derived = world.topology.keys.kdf_diversify(cp.master_key_id, uid)
    challenge = world.names.nonce("chal")
    world.air_event([cp.actor_id, presenter], "challenge", [challenge], flow)

    mac = None
    if attacker is None:
        mac = Mac(derived.key_id, challenge)
    elif step.get("replay"):
        mac = _replayable_mac(world, attacker, uid)
    else:
        candidate = Mac(derived.key_id, challenge)
        if attacker.knowledge.can_derive(candidate):
            mac = candidate
    presentation = {"kind": "symmetric_cr", "uid": uid, "nonce": challenge.nonce_id,
                    "mac": term_to_json(mac) if mac is not None else None}
    world.presentation_log.append(presentation)
    world.air_event([presenter, cp.actor_id], "challenge_response",
                    [Mac(mac.key_id, mac.body)] if mac is not None else [], flow)

    contract = lookup_contract(world.topology, presentation)
    if mac is None:
        reason = "cannot answer challenge"
        granted = False
    elif mac.key_id != derived.key_id:
        reason, granted = "response under wrong card key", False
    elif mac.body != challenge:
        reason, granted = "stale challenge", False
    elif contract is None:
        # The charge point checks its operator-synced contract cache
        # even though the card key verified.
        reason, granted = "no valid contract", False
    else:
        reason, granted = "challenge answered", True
    return AuthResult(granted, reason, "symmetric_cr",
                      credential=_cred_id_for_uid(world, uid),
                      contract=contract.contract_id if granted and contract else "",
                      offline=not cp.online)


def _replayable_mac(world: World, attacker: AttackerState, uid: str) -> Mac | None:
    for pres in reversed(world.presentation_log):
        if pres.get("kind") == "symmetric_cr" and pres.get("uid") == uid and pres.get("mac"):
            old = term_from_json(pres["mac"])
            if isinstance(old, Mac) and attacker.knowledge.can_derive(old):
                return old
    return None


def _auth_asymmetric(world: World, step, cp, presenter, attacker, cred, flow) -> AuthResult:
    if attacker is not None and cred is None:
        cred = world.topology.credentials.get(step.get("cert_of", ""))
    if cred is None or cred.cert_id is None:
        return AuthResult(False, "no certificate presented", "asymmetric_cr")
    cert = world.topology.certs.get(cred.cert_id)
    challenge = world.names.nonce("chal")
    world.air_event([cp.actor_id, presenter], "challenge", [challenge], flow)

    sig = None
    if attacker is None:
        sig = Sign(cred.key_id, challenge)
    else:
        candidate = Sign(cred.key_id, challenge)
        if attacker.knowledge.can_derive(candidate):
            sig = candidate
    presentation = {"kind": "cert", "cert_id": cred.cert_id,
                    "nonce": challenge.nonce_id,
                    "sig": term_to_json(sig) if sig is not None else None}
    world.presentation_log.append(presentation)
    world.air_event([presenter, cp.actor_id], "challenge_response",
                    [sig] if sig is not None else [], flow)

    # Validation is local: the charge point holds the trust anchors and
    # needs no backhaul, which is what makes this scheme offline-capable.
    trusted = None
    if world.config.split_pki:
        cp_cfg = next((a for a in world.config.actors if a.actor_id == cp.actor_id), None)
        trusted = {cp_cfg.anchor or world.config.anchors[0]} if cp_cfg else None
    if cert is None or not verify_chain(cert, world.topology.certs, trusted):
        return AuthResult(False, "bad certificate chain", "asymmetric_cr",
                          credential=cred.credential_id, offline=not cp.online)
    if sig is None:
        return AuthResult(False, "cannot answer challenge", "asymmetric_cr",
                          credential=cred.credential_id, offline=not cp.online)
    if sig.key_id != cert.public_key_id or sig.body != challenge:
        return AuthResult(False, "bad challenge signature", "asymmetric_cr",
                          credential=cred.credential_id, offline=not cp.online)
    contract = lookup_contract(world.topology, presentation)
    if contract is None:
        return AuthResult(False, "no valid contract", "asymmetric_cr",
                          credential=cred.credential_id, offline=not cp.online)
    return AuthResult(True, "certificate proof", "asymmetric_cr",
                      credential=cred.credential_id,
                      contract=contract.contract_id,
                      offline=not cp.online)


def _auth_online(world: World, step, cp, presenter, attacker, cred, flow) -> AuthResult:
    """Verification offloaded to the issuer over the backhaul. Nothing
    works when the charge point cannot reach it."""
    if cred is None and attacker is not None:
        cred = world.topology.credentials.get(step.get("credential", ""))
    cred_id = cred.credential_id if cred is not None else step.get("credential", "?")
    operator = world.operator_of(cp.actor_id)
    if not cp.online or operator is None:
        return AuthResult(False, "offline", "online", credential=cred_id,
                          decision_source="transport", offline=True)

    challenge = world.names.nonce("chal")
    # The challenge reaches the presenter before any response exists,
    # so an attacker holding the card key can answer it.
    world.air_event([cp.actor_id, presenter], "challenge", [challenge], flow)
    request = {"kind": "online", "credential": cred_id, "nonce": challenge.nonce_id,
               "mac": None}
    mac = None
    if cred is not None and cred.key_id is not None:
        candidate = Mac(cred.key_id, challenge)
        if attacker is None:
            mac = candidate
        elif step.get("replay"):
            mac = _replayable_online_mac(world, attacker, cred_id)
        elif attacker.knowledge.can_derive(candidate):
            mac = candidate
    presentation = dict(request, mac=term_to_json(mac) if mac is not None else None)
    world.presentation_log.append(presentation)

    decision, source = _backhaul_decision(world, cp, operator, presentation, flow,
                                          "auth_verify")
    if decision is None:
        return AuthResult(False, "backhaul unreachable", "online",
                          credential=cred_id, decision_source="transport",
                          offline=False)
    return AuthResult(decision.granted, decision.reason, "online",
                      credential=decision.credential or cred_id,
                      contract=decision.contract, decision_source=source,
                      offline=False)


def _replayable_online_mac(world: World, attacker: AttackerState, cred_id: str):
    for pres in reversed(world.presentation_log):
        if pres.get("kind") == "online" and pres.get("credential") == cred_id and pres.get("mac"):
            old = term_from_json(pres["mac"])
            if attacker.knowledge.can_derive(old):
                return old
    return None


def _cred_id_for_uid(world: World, uid: str) -> str:
    cred = world.topology.credential_by_uid(uid)
    return cred.credential_id if cred is not None else ""


def _first_reachable_emsp(world: World, operator: str) -> str | None:
    for other, _link in world.topology.neighbors(operator):
        if world.topology.actor(other).role == Role.EMSP:
            return other
    return None


def _decide_presentation(world: World, presentation: dict) -> AuthDecision:
    kind = presentation.get("kind")
    contract = lookup_contract(world.topology, presentation)
    if kind == "online":
        nonce = presentation.get("nonce", "")
        mac_json = presentation.get("mac")
        cred = world.topology.credentials.get(presentation.get("credential", ""))
        if cred is None or cred.key_id is None:
            return AuthDecision(False, "unknown credential")
        if mac_json is None:
            return AuthDecision(False, "cannot answer challenge",
                                credential=cred.credential_id)
        mac = term_from_json(mac_json)
        if not isinstance(mac, Mac) or mac.key_id != cred.key_id:
            return AuthDecision(False, "response under wrong key",
                                credential=cred.credential_id)
        if not isinstance(mac.body, Nonce) or mac.body.nonce_id != nonce:
            return AuthDecision(False, "stale challenge",
                                credential=cred.credential_id)
        if contract is None or not contract.valid:
            return AuthDecision(False, "no valid contract",
                                credential=cred.credential_id)
        return AuthDecision(True, "issuer verified", credential=cred.credential_id,
                            contract=contract.contract_id)
    # Plain UID lookup: possession of the number is the whole proof.
    if contract is None:
        return AuthDecision(False, "no valid contract")
    cred_id = contract.credential_id
    return AuthDecision(True, "contract on file", credential=cred_id,
                        contract=contract.contract_id)


def _backhaul_decision(world: World, cp, operator: str, presentation: dict,
                       flow: str, purpose: str) -> tuple[AuthDecision | None, str]:
    """Relay a presentation up the backhaul, return the decision that
    came back down and where it really came from."""
    emsp = _first_reachable_emsp(world, operator)
    contract_hint = lookup_contract(world.topology, presentation)
    if contract_hint is not None and world.topology.link_between(operator, contract_hint.emsp):
        emsp = contract_hint.emsp
    up_path = [cp.actor_id, operator] + ([emsp] if emsp else [])

    relay = AuthRelay(cp.actor_id, presentation)
    current = _control_wrap(world, relay, cp.actor_id)
    source = "relay"
    for a, b in zip(up_path, up_path[1:]):
        state = world.compromised.get(a)
        if state is not None:
            action = state.take_named_action("confirm_bogus")
            if action is not None:
                forged = AuthDecision(True, "confirmed",
                                      credential=action.params.get("credential", "bogus"),
                                      contract=action.params.get("contract", ""))
                world.trace.append("attack", attacker=state.attacker_id,
                                   notes=["endpoint:forged_decision"], ref=None,
                                   flow=flow, body=None)
                return _send_decision_down(world, forged, a, cp.actor_id, flow,
                                           "endpoint_forged")
        link = _link_for_hop(world, a, b)
        d = world.send_doc(link, a, b, current, purpose, flow)
        if not d.ok:
            return None, "transport"
        if d.doc.doc_type == "auth_response":
            # Someone answered in place of the far end.
            return _parse_decision(d), "injected" if d.injected else "relay"
        current = d.doc

    decider = up_path[-1]
    received = payload_from_fields("auth_request", current.disclosed_fields())
    decision = _decide_presentation(world, received.presentation)
    return _send_decision_down(world, decision, decider, cp.actor_id, flow, source)


def _send_decision_down(world: World, decision: AuthDecision, decider: str,
                        cp_id: str, flow: str,
                        source: str) -> tuple[AuthDecision | None, str]:
    path = world.topology.route(decider, cp_id)
    if path is None:
        return None, "transport"
    doc = _control_wrap(world, decision, decider)
    current = doc
    final: Delivery | None = None
    for a, b in zip(path, path[1:]):
        link = _link_for_hop(world, a, b)
        final = world.send_doc(link, a, b, current, "auth_decision", flow)
        if not final.ok:
            return None, "transport"
        current = final.doc
    if final is None:
        return decision, source
    parsed = _parse_decision(final)
    if final.injected:
        return parsed, "injected"
    return parsed, source


def _parse_decision(delivery: Delivery) -> AuthDecision:
    try:
        payload = payload_from_fields("auth_response",
                                      delivery.doc.disclosed_fields())
    except ConfigError:
        return AuthDecision(False, "malformed decision")
    return payload


def _energy(world: World, cp_id: str, presenter: str, result: AuthResult,
            step: dict, flow: str) -> None:
    kwh = as_amount(step.get("kwh", "10"))
    start = world.clock
    end = world.tick(30)
    session = ChargeSession(world.names.fresh("chg"), cp_id, presenter,
                            result.credential, result.contract, start, end, kwh,
                            offline=result.offline)
    world.charge_sessions.append(session)
    result.session_ref = session.session_ref
    world.trace.append(
        "energy", session_ref=session.session_ref, charge_point=cp_id,
        presenter=presenter, credential=result.credential,
        contract=result.contract, kwh=str(kwh), offline=result.offline,
        granted_ref=result.event_index, flow=flow)


# ---------------------------------------------------------------------------
# tariffs


DEFAULT_TARIFF = (("0.30", "11"), ("0.25", "11"), ("0.40", "22"))


def tariff_flow(world: World, step: dict) -> dict:
    emsp = step["emsp"]
    ev = step["ev"]
    flow = world.names.fresh("tariff")
    mode = _protection(world, step)
    raw_entries = step.get("entries")
    if raw_entries:
        entries = tuple(TariffEntry(e["slot_start"], e["slot_end"],
                                    as_amount(e["price_per_kwh"]),
                                    as_amount(e["max_power_kw"]))
                        for e in raw_entries)
    else:
        entries = tuple(TariffEntry(i * 15, (i + 1) * 15, as_amount(p), as_amount(kw))
                        for i, (p, kw) in enumerate(DEFAULT_TARIFF))
    table = TariffTable(emsp, entries)
    confidential = _resolve_confidential(world, "tariff_table", table.fields(),
                                         {"$ev": ev, "$emsp": emsp})
    doc = _wrap(world, table, emsp, mode, recipients=(ev,), confidential=confidential)
    world.record_produced(doc, emsp, table.fields(), flow, confidential)

    path = world.topology.route(emsp, ev)
    if path is None:
        raise ConfigError(f"no route from {emsp!r} to {ev!r}")
    delivery = _forward_chain(world, doc, path, "tariff", flow)
    if delivery is None:
        return {"delivered": False}
    verified, _reason = _accept(world, ev, delivery, flow)
    if verified is False:
        return {"delivered": True, "verified": False}

    final = delivery.doc
    readable: list[tuple[int, Decimal]] = []
    for slot in final.slots:
        if not slot.name.startswith("entry") or not slot.name[5:].isdigit():
            continue
        value: str | None = None
        if slot.disclosure is not None:
            value = slot.disclosure.value
        elif slot.confidential_for(ev) is not None:
            value = envelope.decrypt_field(final, slot.name, ev, world.topology)
        if value is None:
            continue  # redacted entries cannot be selected
        try:
            entry = json.loads(value)
            readable.append((int(slot.name[5:]), as_amount(entry["price_per_kwh"])))
        except (ValueError, KeyError, ConfigError):
            continue
    if not readable:
        world.trace.append("rate_selected", actor=ev, doc_id=final.doc_id,
                           entry_index=None, price=None, flow=flow)
        return {"delivered": True, "verified": verified, "selected": None}
    # Cheapest price wins; ties go to the lowest index.
    index, price = min(readable, key=lambda pair: (pair[1], pair[0]))
    world.trace.append("rate_selected", actor=ev, doc_id=final.doc_id,
                       entry_index=index, price=str(price), flow=flow)
    world.labels["last_selected_price"] = {"price": str(price)}

    session_ref = (world.charge_sessions[-1].session_ref
                   if world.charge_sessions else "pending")
    rate = SelectedRate(session_ref, index, price)
    rate_doc = _wrap(world, rate, ev, mode, recipients=(emsp,))
    world.record_produced(rate_doc, ev, rate.fields(), flow, None)
    back = _forward_chain(world, rate_doc, list(reversed(path)), "selected_rate", flow)
    if back is not None:
        _accept(world, emsp, back, flow)
    return {"delivered": True, "verified": verified, "selected": index,
            "price": str(price)}


# ---------------------------------------------------------------------------
# billing records


def cdr_flow(world: World, step: dict) -> dict:
    cpo = step["cpo"]
    emsp = step["emsp"]
    flow = world.names.fresh("cdr")
    mode = _protection(world, step)
    session = world.charge_sessions[-1] if world.charge_sessions else None
    energy = session.energy_kwh if session else as_amount(step.get("kwh", "10"))
    selected = world.labels.get("last_selected_price")
    price = as_amount(step.get("price", selected["price"] if selected else "0.30"))
    contract = step.get("contract") or (session.contract if session else "")
    record = ChargeDetailRecord(
        world.names.fresh("cdr"), contract,
        session.charge_point if session else step.get("location", "unknown"),
        session.start_time if session else 0,
        session.end_time if session else 30,
        energy, _floor3(price * energy))
    confidential = _resolve_confidential(world, "cdr", record.fields(),
                                         {"$emsp": emsp, "$cpo": cpo})
    doc = _wrap(world, record, cpo, mode, recipients=(emsp,), confidential=confidential)
    world.record_produced(doc, cpo, record.fields(), flow, confidential)
    own = envelope.doc_to_json(doc)
    check = envelope.verify_document(doc, world.topology)
    world.store_document(cpo, own, check.ok if doc.mode != Protection.NONE else None,
                         flow)

    if step.get("route") == "clearing_house":
        ch = step.get("clearing_house")
        if ch is None:
            houses = world.topology.actors_with_role(Role.CLEARING_HOUSE)
            if not houses:
                raise ConfigError("cdr route needs a clearing house actor")
            ch = houses[0].actor_id
        path = [cpo, ch, emsp]
    else:
        path = [cpo, emsp]
    delivery = _forward_chain(world, doc, path, "cdr", flow,
                              redact_at=step.get("redact_at"))
    if delivery is None:
        return {"delivered": False}
    verified, _reason = _accept(world, emsp, delivery, flow)
    if verified is not False:
        world.store_document(emsp, delivery.snapshot, verified, flow)
    return {"delivered": True, "verified": verified,
            "doc_id": delivery.doc.doc_id}


def meter_reading_flow(world: World, step: dict) -> dict:
    cp_id = step["charge_point"]
    emsp = step["emsp"]
    flow = world.names.fresh("meter")
    mode = _protection(world, step)
    signer = step.get("signer", cp_id)
    session = world.charge_sessions[-1] if world.charge_sessions else None
    reading = MeterReading(f"meter:{cp_id}", world.clock,
                           session.energy_kwh if session else as_amount(step.get("kwh", "10")))
    doc = _wrap(world, reading, signer, mode, recipients=(emsp,))
    world.record_produced(doc, signer, reading.fields(), flow, None)
    path = world.topology.route(cp_id, emsp)
    if path is None:
        raise ConfigError(f"no route from {cp_id!r} to {emsp!r}")
    delivery = _forward_chain(world, doc, path, "meter_reading", flow)
    if delivery is None:
        return {"delivered": False}
    verified, _reason = _accept(world, emsp, delivery, flow)
    if verified is not False:
        world.store_document(emsp, delivery.snapshot, verified, flow)
    return {"delivered": True, "verified": verified}


def falsify_stored(world: World, step: dict) -> dict:
    """Rewrite one field of a stored record, or probe whether doing so
    would be detectable. Probes leave the store untouched."""
    actor = step["actor"]
    doc_type = step.get("doc_type", "cdr")
    snapshot = world.stored_at(actor, doc_type)
    if snapshot is None:
        # The record never reached this store (rejected in transit,
        # dropped, ...), so there is nothing to falsify.
        world.trace.append("falsify_skipped", actor=actor, doc_type=doc_type,
                           flow="falsify")
        return {"detectable": None, "skipped": True}
    from .adversary import apply_mutation
    field = step["field"]
    doc_before = envelope.doc_from_json(snapshot)
    old = doc_before.disclosed_fields().get(field)
    mutated = apply_mutation(snapshot, {"op": "set_field", "field": field,
                                        "value": step["value"]})
    doc_after = envelope.doc_from_json(mutated)
    before_ok = envelope.verify_document(doc_before, world.topology).ok
    after_ok = envelope.verify_document(doc_after, world.topology).ok
    detectable = bool(before_ok and not after_ok)
    probe = bool(step.get("probe", True))
    world.trace.append(
        "falsify", actor=actor, doc_id=snapshot["doc_id"], doc_type=doc_type,
        field=field, old=old, new=str(step["value"]), probe=probe,
        detectable=detectable, flow="falsify")
    if not probe:
        world.store_document(actor, mutated, after_ok if doc_after.mode != Protection.NONE else None,
                             "falsify", falsified=True)
    return {"detectable": detectable}


def redact_stored(world: World, step: dict) -> dict:
    actor = step["actor"]
    doc_type = step.get("doc_type", "cdr")
    snapshot = world.stored_at(actor, doc_type)
    if snapshot is None:
        raise ConfigError(f"redact_stored: {actor!r} holds no {doc_type}")
    doc = envelope.redact(envelope.doc_from_json(snapshot), step["field"])
    check = envelope.verify_document(doc, world.topology)
    world.trace.append(
        "redact", actor=actor, doc_id=doc.doc_id, field=step["field"],
        in_transit=False, mode=doc.mode.value, verifies_after=check.ok,
        flow="redact")
    world.store_document(actor, envelope.doc_to_json(doc),
                         check.ok if doc.mode != Protection.NONE else None, "redact")
    return {"verifies_after": check.ok}


# ---------------------------------------------------------------------------
# capacity and control


DEFAULT_FORECAST = ({"slot_start": 0, "allotted_kw": "30", "spare_kw": "5"},
                    {"slot_start": 15, "allotted_kw": "22.5", "spare_kw": "0"},
                    {"slot_start": 30, "allotted_kw": "40", "spare_kw": "10"})


def smart_charging_flow(world: World, step: dict) -> dict:
    dso = step["dso"]
    cpo = step["cpo"]
    cps = list(step.get("charge_points", ()))
    if not cps:
        cps = [a.actor_id for a in world.topology.actors_with_role(Role.CHARGE_POINT)]
    if not cps:
        raise ConfigError("smart_charging needs at least one charge point")
    flow = world.names.fresh("smart")
    mode = _protection(world, step)
    slots = tuple(ForecastSlot(s["slot_start"], as_amount(s["allotted_kw"]),
                               as_amount(s["spare_kw"]))
                  for s in step.get("slots", DEFAULT_FORECAST))
    forecast = CapacityForecast(step.get("area", "zone-1"), slots)
    doc = _wrap(world, forecast, dso, mode, recipients=(cpo,))
    world.record_produced(doc, dso, forecast.fields(), flow, None)

    link = _link_for_hop(world, dso, cpo)
    delivery = world.send_doc(link, dso, cpo, doc, "capacity_forecast", flow)
    if not delivery.ok:
        return {"delivered": False}
    verified, _reason = _accept(world, cpo, delivery, flow)
    if verified is False:
        return {"delivered": True, "verified": False, "allocated": False}

    received = payload_from_fields("capacity_forecast",
                                   delivery.doc.disclosed_fields())
    n = len(cps)
    min_kw = as_amount(world.config.options.min_kw_per_point)
    shares: dict[int, Decimal] = {}
    for slot in received.slots:
        share = _floor3(slot.allotted_kw / n)
        if share < min_kw:
            raise InfeasibleAllocation(
                f"slot {slot.slot_start}: {n} points cannot each get "
                f"{min_kw} kW out of {slot.allotted_kw} kW")
        shares[slot.slot_start] = share

    profiles: dict[str, dict] = {}
    for cp in cps:
        profile = ChargeProfile(cp, tuple(ProfileSlot(s, shares[s])
                                          for s in sorted(shares)))
        pdoc = _wrap(world, profile, cpo, mode, recipients=(cp,))
        world.record_produced(pdoc, cpo, profile.fields(), flow, None)
        pdel = _forward_chain(world, pdoc, [cpo, cp], "charge_profile", flow)
        if pdel is not None:
            _accept(world, cp, pdel, flow)
            profiles[cp] = pdel.doc.disclosed_fields()
    world.trace.append(
        "allocation", flow=flow, forecast_doc=doc.doc_id,
        received_fields=delivery.doc.disclosed_fields(), profiles=profiles,
        points=cps)
    return {"delivered": True, "verified": verified, "allocated": True,
            "shares": {k: str(v) for k, v in shares.items()}}


def firmware_flow(world: World, step: dict) -> dict:
    cpio = step["cpio"]
    cp = step["charge_point"]
    flow = world.names.fresh("fw")
    signed = bool(step.get("signed", True))
    mode = Protection.WHOLE_MESSAGE if signed else Protection.NONE
    image = FirmwareImage(step.get("version", "1.1.0"),
                          step.get("content", "fw:genuine"))
    doc = _wrap(world, image, cpio, mode, recipients=(cp,))
    world.record_produced(doc, cpio, image.fields(), flow, None)
    path = world.topology.route(cpio, cp)
    if path is None:
        raise ConfigError(f"no route from {cpio!r} to {cp!r}")
    delivery = _forward_chain(world, doc, path, "firmware", flow)
    if delivery is None:
        return {"delivered": False}
    verified, _reason = _accept(world, cp, delivery, flow)
    fields = delivery.doc.disclosed_fields()
    installed = verified is True or (verified is None and not signed)
    world.trace.append(
        "install", charge_point=cp, version=fields.get("version"),
        content=fields.get("content"), verified=verified, installed=installed,
        flow=flow)
    return {"installed": installed, "verified": verified,
            "content": fields.get("content")}


# ---------------------------------------------------------------------------
# NFC-relayed sessions


def nfc_session_flow(world: World, step: dict) -> dict:
    """A signed session voucher fetched by the driver's phone and shown
    to an offline charge point over NFC. The phone is untrusted relay
    hardware; the charge point trusts only the issuer signature and its
    own replay cache."""
    emsp = step["emsp"]
    phone = step["phone"]
    cp_id = step["charge_point"]
    flow = world.names.fresh("nfc")
    mode = _protection(world, step)
    cp = world.topology.actor(cp_id)

    if step.get("replay"):
        snapshot = world.labels.get("last_session_description")
        if snapshot is None:
            raise ConfigError("nfc replay step needs an earlier session description")
        doc = envelope.doc_from_json(snapshot["body"])
    else:
        desc = SessionDescription(world.names.fresh("nfcsess"), cp_id,
                                  step.get("contract", ""),
                                  as_amount(step.get("max_energy_kwh", "20")))
        doc = _wrap(world, desc, emsp, mode, recipients=(cp_id,))
        world.record_produced(doc, emsp, desc.fields(), flow, None)
        path = world.topology.route(emsp, phone)
        if path is None:
            raise ConfigError(f"no route from {emsp!r} to {phone!r}")
        delivery = _forward_chain(world, doc, path, "session_description", flow)
        if delivery is None:
            return {"granted": False, "reason": "undelivered"}
        doc = delivery.doc
        world.labels["last_session_description"] = {"body": delivery.snapshot}

    doc = _endpoint_forward_hook(world, phone, doc, flow)
    snapshot = envelope.doc_to_json(doc)
    world.air_event([phone, cp_id], "nfc_present", [envelope.doc_term(doc)], flow,
                    body=snapshot)

    verified = envelope.verify_document(doc, world.topology)
    fields = doc.disclosed_fields()
    session_id = fields.get("session_id", "")
    seen = world.replay_seen.setdefault(cp_id, set())
    granted = False
    if not verified.ok:
        reason = f"unverifiable description ({verified.reason})"
    elif fields.get("charge_point") != cp_id:
        reason = "description names another charge point"
    elif session_id in seen:
        reason = "replayed session id"
    else:
        contract = world.topology.contracts.get(fields.get("contract_id", ""))
        if contract is None or not contract.valid:
            reason = "no valid contract"
        else:
            granted = True
            reason = "issuer-signed session"
    if session_id:
        seen.add(session_id)
    result = AuthResult(granted, reason, "nfc",
                        contract=fields.get("contract_id", ""),
                        offline=not cp.online)
    phone_hostile = phone in world.compromised or world.is_attacker(phone)
    result.event_index = world.trace.append(
        "auth", mechanism="nfc", charge_point=cp_id, presenter=phone,
        attacker=phone_hostile, granted=granted, reason=reason, credential="",
        contract=result.contract, decision_source="local",
        offline=result.offline, flow=flow)
    if granted and step.get("charge", True):
        cap = as_amount(fields.get("max_energy_kwh", "20"))
        kwh = min(as_amount(step.get("kwh", "10")), cap)
        _energy(world, cp_id, phone, result, {"kwh": str(kwh)}, flow)
    return {"granted": granted, "reason": reason}


# ---------------------------------------------------------------------------
# conversion and token upkeep


def format_convert(doc: envelope.SecuredDocument,
                   lossy: bool) -> envelope.SecuredDocument:
    """Re-encode a document for another protocol's format.

    The lossy path keeps field values but discards what the target
    format has no place for: salts, commitments and the original
    signature bytes. The envelope-preserving path tunnels the document
    unchanged and only annotates it.
    """
    from dataclasses import replace
    if not lossy:
        return replace(doc, annotations=doc.annotations + ("converted:envelope",))
    slots = tuple(
        envelope.FieldSlot(
            s.name, None,
            envelope.Disclosure(s.disclosure.value, None) if s.disclosure else None,
            ())
        for s in doc.slots)
    return replace(doc, slots=slots, signature=None,
                   annotations=doc.annotations + ("converted:lossy",))


def format_convert_step(world: World, step: dict) -> dict:
    actor = step["actor"]
    to = step["deliver_to"]
    doc_type = step.get("doc_type", "cdr")
    flow = world.names.fresh("convert")
    snapshot = world.stored_at(actor, doc_type) or world.last_doc_at.get(actor)
    if snapshot is None or snapshot.get("doc_type") != doc_type:
        raise ConfigError(f"format_convert: {actor!r} holds no {doc_type}")
    converted = format_convert(envelope.doc_from_json(snapshot),
                               bool(step.get("lossy", False)))
    world.trace.append("convert", actor=actor, doc_id=converted.doc_id,
                       lossy=bool(step.get("lossy", False)), flow=flow)
    delivery = _forward_chain(world, converted,
                              world.topology.route(actor, to) or [actor, to],
                              "converted", flow)
    if delivery is None:
        return {"delivered": False}
    verified, reason = _accept(world, to, delivery, flow)
    return {"delivered": True, "verified": verified, "reason": reason}


def rotate_token_step(world: World, step: dict) -> dict:
    world.rotate_token(step["link"], "token_rotate")
    return {}


def attacker_probe(world: World, step: dict) -> dict:
    state = world.attackers.get(step["attacker"])
    if state is None:
        raise ConfigError(f"attacker_probe: unknown attacker {step['attacker']!r}")
    if state.pending and state.pending[0].action == "present_token":
        head = state.pending.pop(0)
        ok = world.attacker_present_token(state, head.params.get("link", state.spec.target))
        return {"accepted": ok}
    return {"accepted": False}


# ---------------------------------------------------------------------------
# dispatch


_STEPS = {
    "authorize": authorize,
    "tariff": tariff_flow,
    "cdr": cdr_flow,
    "meter_reading": meter_reading_flow,
    "smart_charging": smart_charging_flow,
    "firmware": firmware_flow,
    "nfc_session": nfc_session_flow,
    "format_convert": format_convert_step,
    "falsify_stored": falsify_stored,
    "redact_stored": redact_stored,
    "rotate_token": rotate_token_step,
    "attacker_probe": attacker_probe,
}


def run_step(world: World, step: dict):
    kind = step.get("flow")
    handler = _STEPS.get(kind)
    if handler is None:
        raise ConfigError(f"unknown step flow {kind!r}")
    return handler(world, step)
