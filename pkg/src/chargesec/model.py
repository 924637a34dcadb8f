"""Domain model: actors, links, credentials, contracts, payloads, topology.

The scenario config is pure data; :func:`build_topology` turns it into a
wired world with key material, certificate chains, static tokens and
UID whitelists, all generated deterministically from the seed so a
rebuild from an embedded trace header reproduces the same ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_DOWN, InvalidOperation
from enum import Enum

from .crypto import (
    CertStore, FreshNames, KeyDirectory, Secret, TrustAnchor,
    issue_certificate,
)
from .errors import (
    AmbiguousContract, ConfigError, DanglingLinkEndpoint, DuplicateActorId,
    DuplicateContractId,
)

QUANTUM = Decimal("0.001")
SLOT_MINUTES = 15


def as_amount(value) -> Decimal:
    """Parse a config number into the 3-digit fixed-point domain.

    Strings are preferred in configs; ints are exact; floats are
    rejected to keep arithmetic reproducible.
    """
    if isinstance(value, float):
        raise ConfigError(f"float {value!r} not allowed, quote amounts as strings")
    try:
        return Decimal(str(value)).quantize(QUANTUM, rounding=ROUND_DOWN)
    except InvalidOperation as exc:
        raise ConfigError(f"not a decimal amount: {value!r}") from exc


def canonical_value(v) -> str:
    """Canonical string form used for slot values and term payloads."""
    if isinstance(v, Decimal):
        return str(v.quantize(QUANTUM, rounding=ROUND_DOWN))
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


class Role(str, Enum):
    EV = "ev"
    CHARGE_POINT = "charge_point"
    CPO = "cpo"
    EMSP = "emsp"
    CLEARING_HOUSE = "clearing_house"
    DSO = "dso"
    CPIO = "cpio"


class LinkMode(str, Enum):
    PLAIN = "plain"
    SERVER_AUTH = "server_auth"
    MUTUAL_AUTH = "mutual_auth"


class ClientAuth(str, Enum):
    NONE = "none"
    STATIC_TOKEN = "static_token"
    CLIENT_CERTIFICATE = "client_certificate"


class CredentialKind(str, Enum):
    UID = "uid"
    SYMMETRIC = "symmetric"
    CERTIFICATE = "certificate"
    ONLINE_TOKEN = "online_token"


class Protection(str, Enum):
    NONE = "no_protection"
    WHOLE_MESSAGE = "whole_message_signature"
    SELECTIVE = "selective_disclosure"


# ---------------------------------------------------------------------------
# scenario config (pure data, validated upstream)


@dataclass(frozen=True)
class ActorCfg:
    actor_id: str
    role: Role
    online: bool = True
    anchor: str | None = None  # PKI tree for this actor's certificate


@dataclass(frozen=True)
class LinkCfg:
    link_id: str
    a: str
    b: str
    mode: LinkMode = LinkMode.MUTUAL_AUTH
    client_auth: ClientAuth = ClientAuth.NONE
    cipher_suite: str | None = None
    trusted_anchor: str | None = None


@dataclass(frozen=True)
class CredentialCfg:
    credential_id: str
    kind: CredentialKind
    holder: str
    uid: str | None = None


@dataclass(frozen=True)
class ContractCfg:
    contract_id: str
    emsp: str
    credential: str
    valid: bool = True


@dataclass(frozen=True)
class AttackerCfg:
    attacker_id: str
    kind: str
    target: str
    script: tuple[dict, ...] = ()


@dataclass(frozen=True)
class Options:
    second_cipher_suite: str | None = None
    secure_bootstrap: bool = True
    offline_minimum_charge: bool = False
    min_kw_per_point: str = "0"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int = 0
    actors: tuple[ActorCfg, ...] = ()
    links: tuple[LinkCfg, ...] = ()
    credentials: tuple[CredentialCfg, ...] = ()
    contracts: tuple[ContractCfg, ...] = ()
    uid_whitelists: dict = field(default_factory=dict)
    anchors: tuple[str, ...] = ("root",)
    split_pki: bool = False
    attackers: tuple[AttackerCfg, ...] = ()
    steps: tuple[dict, ...] = ()
    protection: Protection = Protection.SELECTIVE
    confidential: dict = field(default_factory=dict)
    options: Options = field(default_factory=Options)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["actors"] = [{**a, "role": a["role"].value} for a in d["actors"]]
        d["links"] = [{**l, "mode": l["mode"].value, "client_auth": l["client_auth"].value}
                      for l in d["links"]]
        d["credentials"] = [{**c, "kind": c["kind"].value} for c in d["credentials"]]
        d["protection"] = self.protection.value
        d["anchors"] = list(self.anchors)
        d["steps"] = [dict(s) for s in self.steps]
        d["attackers"] = [{**a, "script": [dict(s) for s in a["script"]]}
                          for a in d["attackers"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(
            name=d["name"],
            seed=int(d.get("seed", 0)),
            actors=tuple(ActorCfg(a["actor_id"], Role(a["role"]), a.get("online", True),
                                  a.get("anchor")) for a in d.get("actors", ())),
            links=tuple(LinkCfg(l["link_id"], l["a"], l["b"], LinkMode(l["mode"]),
                                ClientAuth(l.get("client_auth", "none")),
                                l.get("cipher_suite"), l.get("trusted_anchor"))
                        for l in d.get("links", ())),
            credentials=tuple(CredentialCfg(c["credential_id"], CredentialKind(c["kind"]),
                                            c["holder"], c.get("uid"))
                              for c in d.get("credentials", ())),
            contracts=tuple(ContractCfg(c["contract_id"], c["emsp"], c["credential"],
                                        c.get("valid", True))
                            for c in d.get("contracts", ())),
            uid_whitelists=dict(d.get("uid_whitelists", {})),
            anchors=tuple(d.get("anchors", ("root",))),
            split_pki=bool(d.get("split_pki", False)),
            attackers=tuple(AttackerCfg(a["attacker_id"], a["kind"], a["target"],
                                        tuple(a.get("script", ())))
                            for a in d.get("attackers", ())),
            steps=tuple(d.get("steps", ())),
            protection=Protection(d.get("protection", "selective_disclosure")),
            confidential=dict(d.get("confidential", {})),
            options=Options(
                second_cipher_suite=d.get("options", {}).get("second_cipher_suite"),
                secure_bootstrap=d.get("options", {}).get("secure_bootstrap", True),
                offline_minimum_charge=d.get("options", {}).get("offline_minimum_charge", False),
                min_kw_per_point=str(d.get("options", {}).get("min_kw_per_point", "0")),
            ),
        )


# ---------------------------------------------------------------------------
# wired topology


@dataclass
class Actor:
    actor_id: str
    role: Role
    online: bool
    sig_key_id: str
    enc_key_id: str
    cert_id: str | None
    ca_key_id: str | None = None  # eMSPs run a sub-CA for contract credentials
    master_key_id: str | None = None  # charge points under the symmetric scheme


@dataclass
class Credential:
    credential_id: str
    kind: CredentialKind
    holder: str
    uid: str | None
    key_id: str | None  # derived card key, contract keypair, or issuer-shared key
    cert_id: str | None


@dataclass(frozen=True)
class Contract:
    contract_id: str
    emsp: str
    credential_id: str
    valid: bool


@dataclass
class Link:
    link_id: str
    a: str
    b: str
    mode: LinkMode
    client_auth: ClientAuth
    cipher_suite: str | None
    trusted_anchor: str | None


class Topology:
    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.seed = seed
        self.names = FreshNames(seed)
        self.keys = KeyDirectory()
        self.certs = CertStore()
        self.actors: dict[str, Actor] = {}
        self.links: dict[str, Link] = {}
        self.credentials: dict[str, Credential] = {}
        self.contracts: dict[str, Contract] = {}
        self.uid_whitelists: dict[str, set[str]] = {}
        self.link_tokens: dict[str, Secret] = {}
        self.master_key_id: str | None = None
        self._adjacency: dict[str, list[tuple[str, str]]] = {}

    # -- queries ------------------------------------------------------

    def actor(self, actor_id: str) -> Actor:
        try:
            return self.actors[actor_id]
        except KeyError:
            raise ConfigError(f"unknown actor {actor_id!r}") from None

    def link(self, link_id: str) -> Link:
        try:
            return self.links[link_id]
        except KeyError:
            raise ConfigError(f"unknown link {link_id!r}") from None

    def link_between(self, a: str, b: str) -> Link | None:
        for link in self.links.values():
            if {link.a, link.b} == {a, b}:
                return link
        return None

    def neighbors(self, actor_id: str) -> list[tuple[str, str]]:
        return self._adjacency.get(actor_id, [])

    def route(self, start: str, goal: str) -> list[str] | None:
        """Shortest actor path along configured links, BFS in link
        declaration order so routes are stable across runs."""
        if start == goal:
            return [start]
        frontier = [start]
        parents: dict[str, str] = {start: start}
        while frontier:
            nxt: list[str] = []
            for here in frontier:
                for other, _link in self.neighbors(here):
                    if other in parents:
                        continue
                    parents[other] = here
                    if other == goal:
                        path = [other]
                        while path[-1] != start:
                            path.append(parents[path[-1]])
                        return list(reversed(path))
                    nxt.append(other)
            frontier = nxt
        return None

    def actors_with_role(self, role: Role) -> list[Actor]:
        return [a for a in self.actors.values() if a.role == role]

    def credential_by_uid(self, uid: str) -> Credential | None:
        for cred in self.credentials.values():
            if cred.uid == uid:
                return cred
        return None

    def trusted_anchor_ids(self, link: Link | None = None) -> set[str]:
        if link is not None and link.trusted_anchor is not None:
            return {link.trusted_anchor}
        return set(self.certs.anchors)

    def whitelist(self, cpo_id: str) -> set[str]:
        return self.uid_whitelists.get(cpo_id, set())


def lookup_contract(topology: Topology, presentation: dict) -> Contract | None:
    """Resolve a credential presentation to its valid contract.

    Returns None when nothing matches; raises
    :class:`AmbiguousContract` when two valid contracts claim the same
    credential, which is a config bug worth failing loudly on.
    """
    cred: Credential | None = None
    kind = presentation.get("kind")
    if kind == "uid":
        cred = topology.credential_by_uid(presentation.get("uid", ""))
    elif kind in ("symmetric_cr", "online"):
        cred = topology.credentials.get(presentation.get("credential", ""))
        if cred is None and presentation.get("uid"):
            cred = topology.credential_by_uid(presentation["uid"])
    elif kind == "cert":
        cert_id = presentation.get("cert_id", "")
        for c in topology.credentials.values():
            if c.cert_id == cert_id:
                cred = c
                break
    if cred is None:
        return None
    matches = [c for c in topology.contracts.values()
               if c.credential_id == cred.credential_id and c.valid]
    if not matches:
        return None
    if len(matches) > 1:
        raise AmbiguousContract(
            f"credential {cred.credential_id} is claimed by contracts "
            f"{sorted(c.contract_id for c in matches)}")
    return matches[0]


def build_topology(config: ScenarioConfig, seed: int | None = None) -> Topology:
    """Wire actors, links, PKI and credentials from a scenario config."""
    topo = Topology(config, config.seed if seed is None else seed)

    if len(config.anchors) > 1 and not config.split_pki:
        raise ConfigError("multiple anchors require split_pki: true")
    for anchor_id in config.anchors:
        root_key = topo.keys.keygen(anchor_id, "ca")
        topo.certs.add_anchor(TrustAnchor(anchor_id, root_key.key_id))
    default_anchor = config.anchors[0]

    for cfg in config.actors:
        if cfg.actor_id in topo.actors:
            raise DuplicateActorId(f"actor id {cfg.actor_id!r} declared twice")
        anchor_id = cfg.anchor or default_anchor
        anchor = topo.certs.anchors.get(anchor_id)
        if anchor is None:
            raise ConfigError(f"actor {cfg.actor_id}: unknown anchor {anchor_id!r}")
        sig = topo.keys.keygen(cfg.actor_id, "sig")
        enc = topo.keys.keygen(cfg.actor_id, "enc")
        cert = issue_certificate(topo.certs, topo.keys, issuer=anchor,
                                 subject=cfg.actor_id, subject_role=cfg.role,
                                 public_key_id=sig.key_id)
        actor = Actor(cfg.actor_id, cfg.role, cfg.online, sig.key_id, enc.key_id,
                      cert.cert_id)
        if cfg.role == Role.EMSP:
            ca = topo.keys.keygen(cfg.actor_id, "ca")
            issue_certificate(topo.certs, topo.keys, issuer=anchor,
                              subject=f"{cfg.actor_id}/ca", subject_role=cfg.role,
                              public_key_id=ca.key_id, cert_id=f"cert:{cfg.actor_id}/ca")
            actor.ca_key_id = ca.key_id
        topo.actors[actor.actor_id] = actor

    for cfg in config.links:
        if cfg.link_id in topo.links:
            raise ConfigError(f"link id {cfg.link_id!r} declared twice")
        for end in (cfg.a, cfg.b):
            if end not in topo.actors:
                raise DanglingLinkEndpoint(
                    f"link {cfg.link_id!r} references unknown actor {end!r}")
        if cfg.mode == LinkMode.MUTUAL_AUTH and cfg.client_auth == ClientAuth.STATIC_TOKEN:
            raise ConfigError(
                f"link {cfg.link_id!r}: mutual_auth already authenticates the "
                f"client, static_token would be redundant")
        if cfg.mode == LinkMode.PLAIN and cfg.client_auth == ClientAuth.CLIENT_CERTIFICATE:
            raise ConfigError(
                f"link {cfg.link_id!r}: client certificates need a TLS channel")
        link = Link(cfg.link_id, cfg.a, cfg.b, cfg.mode, cfg.client_auth,
                    cfg.cipher_suite, cfg.trusted_anchor)
        topo.links[link.link_id] = link
        topo._adjacency.setdefault(cfg.a, []).append((cfg.b, cfg.link_id))
        topo._adjacency.setdefault(cfg.b, []).append((cfg.a, cfg.link_id))
        if cfg.client_auth == ClientAuth.STATIC_TOKEN:
            topo.link_tokens[cfg.link_id] = Secret(topo.names.fresh(f"tok:{cfg.link_id}:"))

    needs_master = any(c.kind == CredentialKind.SYMMETRIC for c in config.credentials)
    if needs_master:
        master = topo.keys.keygen("fleet", "master", kind="sym")
        topo.master_key_id = master.key_id
        for actor in topo.actors.values():
            if actor.role == Role.CHARGE_POINT:
                actor.master_key_id = master.key_id

    for cfg in config.credentials:
        if cfg.credential_id in topo.credentials:
            raise ConfigError(f"credential id {cfg.credential_id!r} declared twice")
        if cfg.holder not in topo.actors:
            raise ConfigError(
                f"credential {cfg.credential_id!r}: unknown holder {cfg.holder!r}")
        # Every physical card exposes a serial; whether it is enough to
        # authorize is the mechanism's business, not the card's.
        uid = cfg.uid
        if uid is None:
            uid = topo.names.fresh("uid")
        key_id: str | None = None
        cert_id: str | None = None
        if cfg.kind == CredentialKind.SYMMETRIC:
            key_id = topo.keys.kdf_diversify(topo.master_key_id, uid).key_id
        elif cfg.kind == CredentialKind.CERTIFICATE:
            pair = topo.keys.keygen(cfg.credential_id, "contract")
            key_id = pair.key_id
            emsp = _issuing_emsp(config, cfg.credential_id)
            issuer_cert = topo.certs.get(f"cert:{emsp}/ca") if emsp else None
            if issuer_cert is None:
                raise ConfigError(
                    f"credential {cfg.credential_id!r}: certificate credentials "
                    f"need a contract naming their issuing emsp")
            cert = issue_certificate(topo.certs, topo.keys, issuer=issuer_cert,
                                     subject=cfg.credential_id, subject_role=Role.EV,
                                     public_key_id=pair.key_id)
            cert_id = cert.cert_id
        elif cfg.kind == CredentialKind.ONLINE_TOKEN:
            pair = topo.keys.keygen(cfg.credential_id, "issuer", kind="sym")
            key_id = pair.key_id
        topo.credentials[cfg.credential_id] = Credential(
            cfg.credential_id, cfg.kind, cfg.holder, uid, key_id, cert_id)

    for cfg in config.contracts:
        if cfg.contract_id in topo.contracts:
            raise DuplicateContractId(f"contract id {cfg.contract_id!r} declared twice")
        if cfg.emsp not in topo.actors:
            raise ConfigError(f"contract {cfg.contract_id!r}: unknown emsp {cfg.emsp!r}")
        if cfg.credential not in topo.credentials:
            raise ConfigError(
                f"contract {cfg.contract_id!r}: unknown credential {cfg.credential!r}")
        topo.contracts[cfg.contract_id] = Contract(
            cfg.contract_id, cfg.emsp, cfg.credential, cfg.valid)

    for cpo_id, uids in config.uid_whitelists.items():
        if cpo_id not in topo.actors:
            raise ConfigError(f"uid_whitelists: unknown actor {cpo_id!r}")
        resolved = set()
        for entry in uids:
            cred = topo.credentials.get(entry)
            resolved.add(cred.uid if cred is not None and cred.uid else entry)
        topo.uid_whitelists[cpo_id] = resolved

    return topo


def _issuing_emsp(config: ScenarioConfig, credential_id: str) -> str | None:
    for c in config.contracts:
        if c.credential == credential_id:
            return c.emsp
    return None


# ---------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class TariffEntry:
    slot_start: int
    slot_end: int
    price_per_kwh: Decimal
    max_power_kw: Decimal

    def as_dict(self) -> dict:
        return {"slot_start": self.slot_start, "slot_end": self.slot_end,
                "price_per_kwh": canonical_value(self.price_per_kwh),
                "max_power_kw": canonical_value(self.max_power_kw)}


@dataclass(frozen=True)
class TariffTable:
    emsp: str
    entries: tuple[TariffEntry, ...]

    doc_type = "tariff_table"

    def validate(self) -> None:
        if not self.entries:
            raise ConfigError("tariff_table needs at least one entry")
        for e in self.entries:
            if e.slot_end <= e.slot_start:
                raise ConfigError("tariff entry must end after it starts")
            if e.price_per_kwh < 0:
                raise ConfigError("tariff price must be non-negative")

    def fields(self) -> list[tuple[str, str]]:
        out = [("emsp", self.emsp)]
        out += [(f"entry{i}", canonical_value(e.as_dict()))
                for i, e in enumerate(self.entries)]
        return out


@dataclass(frozen=True)
class SelectedRate:
    session_ref: str
    entry_index: int
    price_per_kwh: Decimal

    doc_type = "selected_rate"

    def validate(self) -> None:
        if self.entry_index < 0:
            raise ConfigError("selected_rate entry_index must be >= 0")

    def fields(self) -> list[tuple[str, str]]:
        return [("session_ref", self.session_ref),
                ("entry_index", str(self.entry_index)),
                ("price_per_kwh", canonical_value(self.price_per_kwh))]


@dataclass(frozen=True)
class ChargeDetailRecord:
    cdr_id: str
    contract_id: str
    location: str
    start_time: int
    end_time: int
    energy_kwh: Decimal
    cost: Decimal

    doc_type = "cdr"

    def validate(self) -> None:
        if self.end_time < self.start_time:
            raise ConfigError("cdr must end at or after its start")
        if self.energy_kwh < 0 or self.cost < 0:
            raise ConfigError("cdr energy and cost must be non-negative")

    def fields(self) -> list[tuple[str, str]]:
        return [("cdr_id", self.cdr_id), ("contract_id", self.contract_id),
                ("location", self.location), ("start_time", str(self.start_time)),
                ("end_time", str(self.end_time)),
                ("energy_kwh", canonical_value(self.energy_kwh)),
                ("cost", canonical_value(self.cost))]


@dataclass(frozen=True)
class MeterReading:
    meter_id: str
    timestamp: int
    energy_kwh: Decimal

    doc_type = "meter_reading"

    def validate(self) -> None:
        if self.energy_kwh < 0:
            raise ConfigError("meter reading must be non-negative")

    def fields(self) -> list[tuple[str, str]]:
        return [("meter_id", self.meter_id), ("timestamp", str(self.timestamp)),
                ("energy_kwh", canonical_value(self.energy_kwh))]


@dataclass(frozen=True)
class ForecastSlot:
    slot_start: int
    allotted_kw: Decimal
    spare_kw: Decimal

    def as_dict(self) -> dict:
        return {"slot_start": self.slot_start,
                "allotted_kw": canonical_value(self.allotted_kw),
                "spare_kw": canonical_value(self.spare_kw)}


@dataclass(frozen=True)
class CapacityForecast:
    area: str
    slots: tuple[ForecastSlot, ...]

    doc_type = "capacity_forecast"

    def validate(self) -> None:
        for s in self.slots:
            if s.slot_start % SLOT_MINUTES != 0:
                raise ConfigError(
                    f"forecast slot {s.slot_start} not aligned to {SLOT_MINUTES} minutes")
            if s.allotted_kw < 0 or s.spare_kw < 0:
                raise ConfigError("forecast capacities must be non-negative")

    def fields(self) -> list[tuple[str, str]]:
        out = [("area", self.area)]
        out += [(f"slot{i}", canonical_value(s.as_dict()))
                for i, s in enumerate(self.slots)]
        return out


@dataclass(frozen=True)
class ProfileSlot:
    slot_start: int
    limit_kw: Decimal

    def as_dict(self) -> dict:
        return {"slot_start": self.slot_start, "limit_kw": canonical_value(self.limit_kw)}


@dataclass(frozen=True)
class ChargeProfile:
    charge_point: str
    slots: tuple[ProfileSlot, ...]

    doc_type = "charge_profile"

    def validate(self) -> None:
        for s in self.slots:
            if s.slot_start % SLOT_MINUTES != 0:
                raise ConfigError(
                    f"profile slot {s.slot_start} not aligned to {SLOT_MINUTES} minutes")
            if s.limit_kw < 0:
                raise ConfigError("profile limits must be non-negative")

    def fields(self) -> list[tuple[str, str]]:
        out = [("charge_point", self.charge_point)]
        out += [(f"slot{i}", canonical_value(s.as_dict()))
                for i, s in enumerate(self.slots)]
        return out


@dataclass(frozen=True)
class FirmwareImage:
    version: str
    content: str

    doc_type = "firmware_image"

    def validate(self) -> None:
        if not self.version:
            raise ConfigError("firmware image needs a version")

    def fields(self) -> list[tuple[str, str]]:
        return [("version", self.version), ("content", self.content)]


@dataclass(frozen=True)
class SessionDescription:
    session_id: str
    charge_point: str
    contract_id: str
    max_energy_kwh: Decimal

    doc_type = "session_description"

    def validate(self) -> None:
        if self.max_energy_kwh <= 0:
            raise ConfigError("session description must allow some energy")

    def fields(self) -> list[tuple[str, str]]:
        return [("session_id", self.session_id), ("charge_point", self.charge_point),
                ("contract_id", self.contract_id),
                ("max_energy_kwh", canonical_value(self.max_energy_kwh))]


@dataclass(frozen=True)
class AuthRelay:
    """Authorization check forwarded over the backhaul."""

    charge_point: str
    presentation: dict

    doc_type = "auth_request"

    def validate(self) -> None:
        pass

    def fields(self) -> list[tuple[str, str]]:
        return [("charge_point", self.charge_point),
                ("presentation", canonical_value(self.presentation))]


@dataclass(frozen=True)
class AuthDecision:
    granted: bool
    reason: str
    credential: str = ""
    contract: str = ""

    doc_type = "auth_response"

    def validate(self) -> None:
        pass

    def fields(self) -> list[tuple[str, str]]:
        return [("granted", canonical_value(self.granted)), ("reason", self.reason),
                ("credential", self.credential), ("contract", self.contract)]


Payload = (TariffTable | SelectedRate | ChargeDetailRecord | MeterReading
           | CapacityForecast | ChargeProfile | FirmwareImage | SessionDescription
           | AuthRelay | AuthDecision)

_PAYLOAD_TYPES = {cls.doc_type: cls for cls in (
    TariffTable, SelectedRate, ChargeDetailRecord, MeterReading, CapacityForecast,
    ChargeProfile, FirmwareImage, SessionDescription, AuthRelay, AuthDecision)}


def payload_doc_type(payload: Payload) -> str:
    return payload.doc_type


def _collect_numbered(fields: dict[str, str], prefix: str) -> list[dict]:
    out = []
    i = 0
    while f"{prefix}{i}" in fields:
        out.append(json.loads(fields[f"{prefix}{i}"]))
        i += 1
    # Entries surviving a filtering attack may be non-contiguous.
    extras = sorted(
        (int(k[len(prefix):]), v) for k, v in fields.items()
        if k.startswith(prefix) and k[len(prefix):].isdigit() and int(k[len(prefix):]) >= i)
    out.extend(json.loads(v) for _, v in extras)
    return out


def payload_from_fields(doc_type: str, fields: dict[str, str]) -> Payload:
    """Rebuild a payload from (possibly attacker-mangled) document slots.

    Raises :class:`ConfigError` when required fields are missing, which
    receivers treat as a malformed message.
    """
    try:
        if doc_type == "tariff_table":
            entries = tuple(
                TariffEntry(e["slot_start"], e["slot_end"],
                            as_amount(e["price_per_kwh"]), as_amount(e["max_power_kw"]))
                for e in _collect_numbered(fields, "entry"))
            return TariffTable(fields.get("emsp", ""), entries)
        if doc_type == "selected_rate":
            return SelectedRate(fields["session_ref"], int(fields["entry_index"]),
                                as_amount(fields["price_per_kwh"]))
        if doc_type == "cdr":
            return ChargeDetailRecord(
                fields["cdr_id"], fields["contract_id"], fields.get("location", ""),
                int(fields["start_time"]), int(fields["end_time"]),
                as_amount(fields["energy_kwh"]), as_amount(fields["cost"]))
        if doc_type == "meter_reading":
            return MeterReading(fields["meter_id"], int(fields["timestamp"]),
                                as_amount(fields["energy_kwh"]))
        if doc_type == "capacity_forecast":
            slots = tuple(ForecastSlot(s["slot_start"], as_amount(s["allotted_kw"]),
                                       as_amount(s["spare_kw"]))
                          for s in _collect_numbered(fields, "slot"))
            return CapacityForecast(fields.get("area", ""), slots)
        if doc_type == "charge_profile":
            slots = tuple(ProfileSlot(s["slot_start"], as_amount(s["limit_kw"]))
                          for s in _collect_numbered(fields, "slot"))
            return ChargeProfile(fields.get("charge_point", ""), slots)
        if doc_type == "firmware_image":
            return FirmwareImage(fields["version"], fields.get("content", ""))
        if doc_type == "session_description":
            return SessionDescription(fields["session_id"], fields["charge_point"],
                                      fields["contract_id"],
                                      as_amount(fields["max_energy_kwh"]))
        if doc_type == "auth_request":
            return AuthRelay(fields["charge_point"], json.loads(fields["presentation"]))
        if doc_type == "auth_response":
            return AuthDecision(fields["granted"] == "true", fields.get("reason", ""),
                                fields.get("credential", ""), fields.get("contract", ""))
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot rebuild {doc_type} payload: {exc}") from exc
    raise ConfigError(f"unknown doc_type {doc_type!r}")
