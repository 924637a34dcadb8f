"""Security requirement verdicts computed from a recorded trace.

Nothing here touches live engine state: the trace carries the scenario
config in its header, the topology is rebuilt deterministically from
it, and attacker knowledge is replayed from the observation events.
That is what makes `verify-trace` possible on a bare trace file.

Two grading styles coexist on purpose. Channel requirements (server
authentication, client authentication, transport protection) grade the
configured mechanism as exercised by the trace: a bearer token that
crosses a plaintext link is broken whether or not someone was
listening that day. Data requirements (end-to-end authenticity,
field confidentiality, non-repudiation) grade witnessed behaviour:
they are violated exactly when the trace shows a reader, a consumed
forgery, or an undetectable rewrite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .adversary import Knowledge
from .crypto import Enc, Term, term_from_json
from .engine import observation_term
from .envelope import doc_from_json, redact, value_term, verify_document
from .errors import CorruptTrace, UnknownField
from .model import (
    ClientAuth, LinkMode, Protection, ScenarioConfig, as_amount,
    build_topology,
)
from .trace import Trace


class Status(str, Enum):
    HOLDS = "holds"
    CONDITIONAL = "conditionally_holds"
    VIOLATED = "violated"
    NOT_APPLICABLE = "not_applicable"


#: Fixed reporting order for the nine requirements.
REQUIREMENTS = ("SR1a", "SR1b", "SR1c", "SR2a", "SR2b",
                "SR3", "SR4a", "SR4b", "SR5")

_SUMMARIES = {
    "SR1a": "only legitimate credential holders get charging sessions",
    "SR1b": "every granted session is backed by a valid contract",
    "SR1c": "authorized drivers can still charge while the backhaul is down",
    "SR2a": "clients authenticate the server end of every backhaul link",
    "SR2b": "servers authenticate their clients",
    "SR3": "backhaul traffic is encrypted with an approved cipher suite",
    "SR4a": "consumed documents are exactly what their producer signed",
    "SR4b": "confidential fields are readable only by their intended audience",
    "SR5": "stored billing records cannot be falsified undetectably",
}


@dataclass
class Finding:
    requirement: str
    status: Status
    evidence: list[str] = field(default_factory=list)
    witnesses: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"requirement": self.requirement, "status": self.status.value,
                "summary": _SUMMARIES[self.requirement],
                "evidence": list(self.evidence),
                "witnesses": list(self.witnesses)}


@dataclass
class Report:
    scenario: str
    seed: int
    findings: dict[str, Finding]
    congestion: dict
    redaction: dict

    @property
    def any_violated(self) -> bool:
        return any(f.status == Status.VIOLATED for f in self.findings.values())

    def ordered(self) -> list[Finding]:
        return [self.findings[r] for r in REQUIREMENTS]

    def as_dict(self) -> dict:
        return {"scenario": self.scenario, "seed": self.seed,
                "findings": [f.as_dict() for f in self.ordered()],
                "congestion": self.congestion, "redaction": self.redaction}


# ---------------------------------------------------------------------------
# trace scan


class TraceAnalysis:
    """One pass over the events, indexed for the predicates below."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.config = ScenarioConfig.from_dict(trace.config_dict)
        self.topology = build_topology(self.config, trace.seed)
        self.knowledge: dict[str, Knowledge] = {}
        self.attacker_kind: dict[str, str] = {}
        self.compromised: dict[str, str] = {}  # actor -> attacker behind it
        self.produced: dict[str, dict] = {}  # doc_id -> produced event
        # doc_id -> field -> actor -> first event index where it was readable
        self.readers: dict[str, dict[str, dict[str, int]]] = {}
        self.auth_events: list[tuple[int, dict]] = []
        self.accepted: list[tuple[int, dict]] = []
        self.falsify_events: list[tuple[int, dict]] = []
        self.redact_events: list[tuple[int, dict]] = []
        self.allocations: list[tuple[int, dict]] = []
        self.token_events: list[tuple[int, dict]] = []
        self.link_traffic: set[str] = set()  # links that carried anything
        self.handshake_fails: list[tuple[int, dict]] = []
        self.injected_deliveries: list[tuple[int, dict]] = []
        self.attacks: list[tuple[int, dict]] = []
        self.blocked: list[tuple[int, dict]] = []
        self._scan()

    # -- replay helpers ----------------------------------------------

    def _knows(self, attacker_id: str) -> Knowledge:
        kn = self.knowledge.get(attacker_id)
        if kn is None:
            raise CorruptTrace(f"event references unknown attacker {attacker_id!r}")
        return kn

    def _observe(self, attacker_id: str, term: Term) -> None:
        self._knows(attacker_id).add(term)

    def _observe_body(self, attacker_id: str, body: dict,
                      session_key: str | None) -> None:
        term = observation_term(body)
        if session_key:
            term = Enc(session_key, term)
        self._observe(attacker_id, term)

    def _mark_readers(self, actor: str, body: dict, idx: int) -> None:
        doc_id = body.get("doc_id")
        if not doc_id:
            return
        per_doc = self.readers.setdefault(doc_id, {})
        for slot in body.get("slots", ()):  # disclosed -> anyone holding it reads
            if slot.get("disclosure") is not None:
                per_doc.setdefault(slot["name"], {}).setdefault(actor, idx)
            for recipient, _blob in slot.get("confidential", ()):
                if recipient == actor:
                    per_doc.setdefault(slot["name"], {}).setdefault(actor, idx)

    def _minted_values(self, attacker_id: str, body: dict) -> None:
        """A message body the attacker shaped: every disclosed value in
        it is either one it already saw in the clear or one it wrote."""
        doc_id = body.get("doc_id", "")
        for slot in body.get("slots", ()):
            disc = slot.get("disclosure")
            if disc is not None:
                self._observe(attacker_id, value_term(doc_id, slot["name"],
                                                      disc["value"]))

    # -- the scan -----------------------------------------------------

    def _scan(self) -> None:
        for idx, ev in enumerate(self.trace.events):
            kind = ev.get("kind")
            handler = getattr(self, f"_on_{kind}", None)
            if handler is not None:
                handler(idx, ev)

    def _on_attacker_activated(self, idx: int, ev: dict) -> None:
        kn = Knowledge(self.topology.keys)
        for cert in self.topology.certs.certs.values():
            kn.add(cert.as_term())
        for blob in ev.get("learned", ()):
            kn.add(term_from_json(blob))
        self.knowledge[ev["attacker"]] = kn
        self.attacker_kind[ev["attacker"]] = ev.get("atk_kind", "")
        for actor in ev.get("compromised", ()):
            self.compromised[actor] = ev["attacker"]

    def _on_air(self, idx: int, ev: dict) -> None:
        terms = [term_from_json(t) for t in ev.get("terms", ())]
        for aid in ev.get("observed_by", ()):
            for t in terms:
                self._observe(aid, t)
        body = ev.get("body")
        if body:
            for actor in ev.get("participants", ()):
                self._mark_readers(actor, body, idx)

    def _on_send(self, idx: int, ev: dict) -> None:
        self.link_traffic.add(ev["link"])
        body = ev.get("body")
        if body is None:
            return
        plain = ev.get("mode") == LinkMode.PLAIN.value
        for aid in ev.get("observed_by", ()):
            self._observe_body(aid, body, None if plain else ev.get("session_key"))
        attacker = ev.get("attacker")
        if ev.get("injected"):
            # The claimed sender never saw this message; the attacker
            # composed it and knows it in full.
            if attacker:
                self._minted_values(attacker, body)
                self._observe_body(attacker, body, None)
            return
        sender = ev.get("sender")
        if sender in self.compromised:
            self._observe_body(self.compromised[sender], body, None)

    def _on_deliver(self, idx: int, ev: dict) -> None:
        body = ev.get("body")
        actor = ev.get("actor")
        if body is None or actor is None:
            return
        if actor in self.compromised:
            self._observe_body(self.compromised[actor], body, None)
        self._mark_readers(actor, body, idx)
        if ev.get("injected"):
            self.injected_deliveries.append((idx, ev))

    def _on_produced(self, idx: int, ev: dict) -> None:
        self.produced[ev["doc_id"]] = dict(ev, index=idx)
        actor = ev["actor"]
        for name in ev.get("fields", {}):
            self.readers.setdefault(ev["doc_id"], {}).setdefault(
                name, {}).setdefault(actor, idx)
        if actor in self.compromised:
            aid = self.compromised[actor]
            body = ev.get("body")
            if body:
                self._observe_body(aid, body, None)
            for name, value in ev.get("fields", {}).items():
                self._observe(aid, value_term(ev["doc_id"], name, value))

    def _on_store(self, idx: int, ev: dict) -> None:
        body = ev.get("body")
        actor = ev.get("actor")
        if body and actor:
            self._mark_readers(actor, body, idx)
            if actor in self.compromised:
                self._observe_body(self.compromised[actor], body, None)

    def _on_attack(self, idx: int, ev: dict) -> None:
        self.attacks.append((idx, ev))
        body = ev.get("body")
        if body:
            self._minted_values(ev["attacker"], body)

    def _on_attack_blocked(self, idx: int, ev: dict) -> None:
        self.blocked.append((idx, ev))

    def _on_token_auth(self, idx: int, ev: dict) -> None:
        self.token_events.append((idx, ev))
        self.link_traffic.add(ev["link"])
        self._replay_token(ev)

    def _on_token_rotate(self, idx: int, ev: dict) -> None:
        self.token_events.append((idx, ev))
        self._replay_token(ev)

    def _replay_token(self, ev: dict) -> None:
        blob = ev.get("token")
        if blob is None:
            return
        token = term_from_json(blob)
        if ev.get("mode") == LinkMode.PLAIN.value:
            for aid in ev.get("observed_by", ()):
                self._observe(aid, token)
        link = self.topology.links.get(ev["link"])
        if link is not None:
            for end in (link.a, link.b):
                if end in self.compromised:
                    self._observe(self.compromised[end], token)

    def _on_handshake(self, idx: int, ev: dict) -> None:
        if ev.get("ok"):
            self.link_traffic.add(ev["link"])
        else:
            self.handshake_fails.append((idx, ev))

    def _on_auth(self, idx: int, ev: dict) -> None:
        self.auth_events.append((idx, ev))

    def _on_accepted(self, idx: int, ev: dict) -> None:
        self.accepted.append((idx, ev))
        body = ev.get("body")
        if body:
            self._mark_readers(ev["actor"], body, idx)

    def _on_falsify(self, idx: int, ev: dict) -> None:
        self.falsify_events.append((idx, ev))

    def _on_redact(self, idx: int, ev: dict) -> None:
        self.redact_events.append((idx, ev))

    def _on_allocation(self, idx: int, ev: dict) -> None:
        self.allocations.append((idx, ev))

    # -- derived views ------------------------------------------------

    def used_links(self) -> list:
        return [self.topology.links[l] for l in sorted(self.link_traffic)
                if l in self.topology.links]

    def value_readable_by_attacker(self, doc_id: str, name: str,
                                   value: str) -> str | None:
        target = value_term(doc_id, name, value)
        for aid in sorted(self.knowledge):
            if self.knowledge[aid].can_derive(target):
                return aid
        return None


# ---------------------------------------------------------------------------
# requirement predicates


def check_sr1a(a: TraceAnalysis) -> Finding:
    if not a.auth_events:
        return Finding("SR1a", Status.NOT_APPLICABLE,
                       ["no authorization attempts in this run"])
    bad, denied_attacks = [], 0
    for idx, ev in a.auth_events:
        if not ev.get("attacker"):
            continue
        if ev.get("granted"):
            bad.append((idx, ev))
        else:
            denied_attacks += 1
    if bad:
        return Finding(
            "SR1a", Status.VIOLATED,
            [f"{ev['presenter']} was granted a session at {ev['charge_point']} "
             f"via {ev['mechanism']} ({ev['reason']})" for _, ev in bad],
            [idx for idx, _ in bad])
    grants = sum(1 for _, ev in a.auth_events if ev.get("granted"))
    return Finding(
        "SR1a", Status.HOLDS,
        [f"{grants} session(s) granted, none to an attacker; "
         f"{denied_attacks} attacker attempt(s) denied"])


def check_sr1b(a: TraceAnalysis) -> Finding:
    grants = [(i, e) for i, e in a.auth_events if e.get("granted")]
    if not grants:
        return Finding("SR1b", Status.NOT_APPLICABLE, ["no sessions were granted"])
    bad = []
    for idx, ev in grants:
        contract = a.topology.contracts.get(ev.get("contract", ""))
        if contract is None:
            bad.append((idx, f"grant at {ev['charge_point']} cites no known "
                             f"contract (source: {ev['decision_source']})"))
        elif not contract.valid:
            bad.append((idx, f"grant at {ev['charge_point']} cites revoked "
                             f"contract {contract.contract_id}"))
    if bad:
        return Finding("SR1b", Status.VIOLATED, [m for _, m in bad],
                       [i for i, _ in bad])
    return Finding("SR1b", Status.HOLDS,
                   [f"all {len(grants)} grant(s) trace to a valid contract"])


def check_sr1c(a: TraceAnalysis) -> Finding:
    offline = [(i, e) for i, e in a.auth_events if e.get("offline")]
    if not offline:
        return Finding("SR1c", Status.NOT_APPLICABLE,
                       ["no authorization was attempted while offline"])
    honest = [(i, e) for i, e in offline if not e.get("attacker")]
    if not honest:
        return Finding("SR1c", Status.NOT_APPLICABLE,
                       ["only attacker attempts happened offline"])
    granted = [(i, e) for i, e in honest if e.get("granted")]
    if granted:
        return Finding("SR1c", Status.HOLDS,
                       [f"{len(granted)} offline authorization(s) succeeded "
                        f"without backhaul"],
                       [i for i, _ in granted])
    return Finding(
        "SR1c", Status.VIOLATED,
        [f"{e['mechanism']} denied {e['presenter']} at {e['charge_point']} "
         f"while offline ({e['reason']})" for i, e in honest],
        [i for i, _ in honest])


def check_sr2a(a: TraceAnalysis) -> Finding:
    links = a.used_links()
    if not links:
        return Finding("SR2a", Status.NOT_APPLICABLE, ["no link carried traffic"])
    bad, evidence = [], []
    for link in links:
        if link.mode == LinkMode.PLAIN:
            bad.append(link.link_id)
            evidence.append(f"{link.link_id} ({link.a}-{link.b}) offers no "
                            f"server authentication")
    witnesses = [i for i, e in a.injected_deliveries]
    if bad:
        if witnesses:
            evidence.append(f"{len(witnesses)} message(s) were accepted from an "
                            f"impersonated sender")
        return Finding("SR2a", Status.VIOLATED, evidence, witnesses)
    return Finding("SR2a", Status.HOLDS,
                   [f"all {len(links)} used link(s) authenticate the server "
                    f"against a pinned trust anchor"])


def check_sr2b(a: TraceAnalysis) -> Finding:
    links = a.used_links()
    if not links:
        return Finding("SR2b", Status.NOT_APPLICABLE, ["no link carried traffic"])
    worst = Status.HOLDS
    evidence, witnesses = [], []
    attacker_token_wins = [
        (i, e) for i, e in a.token_events
        if e.get("attacker") and e.get("ok") and e["kind"] == "token_auth"]
    for link in links:
        if link.client_auth == ClientAuth.NONE:
            worst = Status.VIOLATED
            evidence.append(f"{link.link_id} accepts any client unauthenticated")
        elif link.client_auth == ClientAuth.STATIC_TOKEN:
            wins_here = [(i, e) for i, e in attacker_token_wins
                         if e["link"] == link.link_id]
            if link.mode == LinkMode.PLAIN:
                worst = Status.VIOLATED
                evidence.append(f"{link.link_id} sends its bearer token in the "
                                f"clear; anyone listening can replay it")
            elif wins_here:
                worst = Status.VIOLATED
                evidence.append(f"an attacker authenticated as a client on "
                                f"{link.link_id} with a captured token")
                witnesses.extend(i for i, _ in wins_here)
            elif not a.config.options.secure_bootstrap:
                rotations = [i for i, e in a.token_events
                             if e["kind"] == "token_rotate"
                             and e["link"] == link.link_id and e.get("ok")]
                if rotations:
                    if worst == Status.HOLDS:
                        worst = Status.CONDITIONAL
                    evidence.append(
                        f"the token for {link.link_id} leaked at provisioning "
                        f"but was rotated before an attacker used it")
                    witnesses.extend(rotations)
                else:
                    worst = Status.VIOLATED
                    evidence.append(f"the bearer token for {link.link_id} was "
                                    f"provisioned over an insecure channel")
            else:
                if worst == Status.HOLDS:
                    worst = Status.CONDITIONAL
                evidence.append(f"{link.link_id} rests on bearer-token secrecy "
                                f"(held here, but unprovable)")
        else:
            evidence.append(f"{link.link_id} requires a client certificate")
    return Finding("SR2b", worst, evidence, witnesses)


def check_sr3(a: TraceAnalysis) -> Finding:
    links = a.used_links()
    if not links:
        return Finding("SR3", Status.NOT_APPLICABLE, ["no link carried traffic"])
    bad = [l for l in links if l.mode == LinkMode.PLAIN]
    if bad:
        return Finding(
            "SR3", Status.VIOLATED,
            [f"{l.link_id} ({l.a}-{l.b}) carries traffic unencrypted" for l in bad])
    return Finding("SR3", Status.HOLDS,
                   [f"all {len(links)} used link(s) run TLS with an approved "
                    f"cipher suite"])


def check_sr4a(a: TraceAnalysis) -> Finding:
    if not a.accepted:
        return Finding("SR4a", Status.NOT_APPLICABLE, ["no documents were consumed"])
    violations: list[tuple[int, str]] = []
    detections: list[int] = []
    for idx, ev in a.accepted:
        if ev.get("verified") is False:
            detections.append(idx)
            continue
        orig = a.produced.get(ev["doc_id"])
        if orig is None:
            violations.append((idx, f"{ev['actor']} consumed {ev['doc_type']} "
                                    f"{ev['doc_id']} that no producer emitted"))
            continue
        committed = set(ev.get("commitments", ()))
        for name, value in ev.get("fields", {}).items():
            if name not in orig["fields"]:
                violations.append((idx, f"field {name} was added to "
                                        f"{ev['doc_id']} in transit"))
            elif orig["fields"][name] != value:
                violations.append((idx, f"field {name} of {ev['doc_id']} was "
                                        f"altered in transit "
                                        f"({orig['fields'][name]!r} -> {value!r})"))
        confidential = set(orig.get("confidential", {}))
        for name in orig["fields"]:
            if name in ev.get("fields", {}) or name in committed:
                continue
            if name in confidential and ev.get("mode") == Protection.SELECTIVE.value:
                continue  # carried encrypted, not disclosed: nothing missing
            violations.append((idx, f"field {name} vanished from {ev['doc_id']} "
                                    f"with no commitment left behind"))
    if violations:
        return Finding("SR4a", Status.VIOLATED,
                       sorted(set(m for _, m in violations)),
                       sorted(set(i for i, _ in violations)))
    note = f"{len(a.accepted)} consumed document(s) match what was produced"
    if detections:
        note += (f"; {len(detections)} tampered or unverifiable one(s) "
                 f"were rejected")
    return Finding("SR4a", Status.HOLDS, [note], detections)


def check_sr4b(a: TraceAnalysis) -> Finding:
    policies = {doc_id: ev for doc_id, ev in a.produced.items()
                if ev.get("confidential")}
    if not policies:
        return Finding("SR4b", Status.NOT_APPLICABLE,
                       ["no field carries a confidentiality policy"])
    violations: list[tuple[int | None, str]] = []
    for doc_id, ev in sorted(policies.items()):
        producer = ev["actor"]
        for name, recipients in sorted(ev["confidential"].items()):
            allowed = set(recipients) | {producer}
            for actor, first_idx in sorted(
                    a.readers.get(doc_id, {}).get(name, {}).items()):
                if actor in allowed or actor in a.compromised:
                    continue
                violations.append((first_idx,
                                   f"{actor} could read {doc_id}.{name} "
                                   f"(allowed: {sorted(allowed)})"))
            value = ev["fields"].get(name)
            if value is None:
                continue
            attacker = a.value_readable_by_attacker(doc_id, name, value)
            if attacker is not None:
                violations.append((None, f"attacker {attacker} can derive the "
                                         f"value of {doc_id}.{name}"))
    if violations:
        return Finding("SR4b", Status.VIOLATED,
                       sorted(set(m for _, m in violations)),
                       sorted(set(i for i, _ in violations if i is not None)))
    fields = sum(len(ev["confidential"]) for ev in policies.values())
    return Finding("SR4b", Status.HOLDS,
                   [f"{fields} confidential field(s) stayed within their "
                    f"intended audience"])


def check_sr5(a: TraceAnalysis) -> Finding:
    if not a.falsify_events:
        return Finding("SR5", Status.NOT_APPLICABLE,
                       ["no falsification was attempted on stored records"])
    bad = [(i, e) for i, e in a.falsify_events if not e.get("detectable")]
    if bad:
        return Finding(
            "SR5", Status.VIOLATED,
            [f"{e['actor']} rewrote {e['field']} of stored {e['doc_type']} "
             f"{e['doc_id']} ({e['old']!r} -> {e['new']!r}) with nothing to "
             f"catch it" for _, e in bad],
            [i for i, _ in bad])
    return Finding("SR5", Status.HOLDS,
                   [f"all {len(a.falsify_events)} falsification attempt(s) on "
                    f"stored records are detectable against the signature"])


# ---------------------------------------------------------------------------
# auxiliary checks


def _numbered_json(fields: dict, prefix: str) -> list[dict]:
    out = []
    i = 0
    while f"{prefix}{i}" in fields:
        out.append(json.loads(fields[f"{prefix}{i}"]))
        i += 1
    return out


def congestion_check(a: TraceAnalysis | Trace) -> dict:
    """Allocated power per slot must fit inside the grid ground truth,
    which is the forecast as the grid operator produced it, not as it
    arrived."""
    if isinstance(a, Trace):
        a = TraceAnalysis(a)
    reports = []
    ok = True
    for idx, ev in a.allocations:
        orig = a.produced.get(ev.get("forecast_doc", ""))
        if orig is None:
            continue
        truth = {s["slot_start"]: as_amount(s["allotted_kw"])
                 for s in _numbered_json(orig["fields"], "slot")}
        allocated: dict[int, Decimal] = {}
        for cp, fields in sorted(ev.get("profiles", {}).items()):
            for s in _numbered_json(fields, "slot"):
                allocated[s["slot_start"]] = (
                    allocated.get(s["slot_start"], Decimal(0))
                    + as_amount(s["limit_kw"]))
        breaches = []
        for slot, total in sorted(allocated.items()):
            limit = truth.get(slot)
            if limit is None or total > limit:
                tampered = [i for i, atk in a.attacks
                            if atk.get("flow") == ev.get("flow")]
                breaches.append({
                    "slot_start": slot, "allotted_kw": str(limit),
                    "allocated_kw": str(total), "attack_witnesses": tampered})
                ok = False
        reports.append({"allocation": idx, "forecast_doc": ev.get("forecast_doc"),
                        "breaches": breaches})
    return {"ok": ok, "allocations": reports}


def redaction_gdpr_check(stored: dict, topology, field: str = "location") -> dict:
    """Which stored documents would still verify with this field removed?

    Data-minimisation probe over documents at rest, keyed like
    ``World.stored``. Selective disclosure passes, whole-message
    signatures fail, and unprotected documents are flagged as vacuous:
    the field comes out trivially, but there was never a signature to
    preserve.
    """
    rows = []
    ok = True
    for (owner, _doc_id), snapshot in sorted(stored.items()):
        doc = doc_from_json(snapshot)
        try:
            doc.slot(field)
        except UnknownField:
            continue
        row = {"owner": owner, "doc_id": doc.doc_id,
               "doc_type": doc.doc_type, "mode": doc.mode.value}
        if doc.mode == Protection.NONE:
            row.update(redactable=False, vacuous=True)
            ok = False
        else:
            after = verify_document(redact(doc, field), topology)
            row.update(redactable=after.ok, vacuous=False)
            ok = ok and after.ok
        rows.append(row)
    return {"ok": ok, "documents": rows}


def redaction_check(a: TraceAnalysis | Trace) -> dict:
    """Per-field redaction must keep the signature checkable; formats
    signing the whole message cannot do that, which is the finding."""
    if isinstance(a, Trace):
        a = TraceAnalysis(a)
    rows = []
    ok = True
    for idx, ev in a.redact_events:
        verifies = bool(ev.get("verifies_after"))
        selective = ev.get("mode") == Protection.SELECTIVE.value
        if selective and not verifies:
            ok = False
        rows.append({"event": idx, "actor": ev.get("actor"),
                     "doc_id": ev.get("doc_id"), "field": ev.get("field"),
                     "mode": ev.get("mode"), "in_transit": ev.get("in_transit"),
                     "verifies_after": verifies})
    return {"ok": ok, "redactions": rows}


# ---------------------------------------------------------------------------
# entry point


_CHECKS = (check_sr1a, check_sr1b, check_sr1c, check_sr2a, check_sr2b,
           check_sr3, check_sr4a, check_sr4b, check_sr5)


def check_all(trace: Trace) -> Report:
    analysis = TraceAnalysis(trace)
    findings = {}
    for check in _CHECKS:
        finding = check(analysis)
        findings[finding.requirement] = finding
    return Report(trace.scenario, trace.seed, findings,
                  congestion_check(analysis), redaction_check(analysis))
