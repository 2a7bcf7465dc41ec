"""Multi-domain cyberspace world model and scenario ingestion.

A scenario is a YAML document describing spaces, devices, ports, services,
files and information items, together with physical adjacency, port wiring,
immutable security rules and the initial (mutable) firewall ACL.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import yaml


class ScenarioError(Exception):
    """Base class for scenario loading problems."""


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, message: str, offending: str | None = None):
        super().__init__(message if offending is None else f"{message}: {offending}")
        self.offending = offending


class EntityClass(str, enum.Enum):
    SPACE = "Space"
    DEVICE = "Device"
    PORT = "Port"
    SERVICE = "Service"
    FILE = "File"
    INFO = "InfoItem"


class PermissionKind(str, enum.Enum):
    SPACE_ENTER = "SpaceEnter"
    OBJECT_USE = "ObjectUse"
    OBJECT_DOMINATE = "ObjectDominate"
    PORT_USE = "PortUse"
    PORT_DOMINATE = "PortDominate"
    SERVICE_REACH = "ServiceReach"
    SERVICE_DOMINATE = "ServiceDominate"
    FILE_DOMINATE = "FileDominate"
    INFORMATION_KNOW = "InformationKnow"


_LEGAL_KINDS: dict[EntityClass, tuple[PermissionKind, ...]] = {
    EntityClass.SPACE: (PermissionKind.SPACE_ENTER,),
    EntityClass.DEVICE: (PermissionKind.OBJECT_USE, PermissionKind.OBJECT_DOMINATE),
    EntityClass.PORT: (PermissionKind.PORT_USE, PermissionKind.PORT_DOMINATE),
    EntityClass.SERVICE: (PermissionKind.SERVICE_REACH, PermissionKind.SERVICE_DOMINATE),
    EntityClass.FILE: (PermissionKind.FILE_DOMINATE,),
    EntityClass.INFO: (PermissionKind.INFORMATION_KNOW,),
}

# Entity classes in declaration order; fixes the derived atom enumeration.
CLASS_ORDER = tuple(_LEGAL_KINDS)

# Device kinds that pass traffic between their own ports.
FORWARDING_KINDS = frozenset({"firewall", "router", "switch"})


def legal_kinds(cls: EntityClass | str) -> frozenset[PermissionKind]:
    """Permission kinds that may be held over an entity of class ``cls``."""
    return frozenset(_LEGAL_KINDS[EntityClass(cls)])


@dataclass(frozen=True, order=True)
class PermissionAtom:
    entity: str
    kind: PermissionKind

    def __str__(self) -> str:
        return f"{self.entity}:{self.kind.value}"

    @classmethod
    def parse(cls, text: str) -> "PermissionAtom":
        entity, sep, kind = text.rpartition(":")
        if not sep:
            raise ValueError(f"atom must look like 'entity:Kind', got {text!r}")
        return cls(entity, PermissionKind(kind))


@dataclass(frozen=True)
class Entity:
    id: str
    cls: EntityClass
    kind: str | None = None  # device kind, e.g. "firewall"
    location: str | None = None  # Space id, devices only
    host: str | None = None  # Device (port), Port (service), Service or Device (file)
    password: str | None = None  # InfoItem id guarding a service
    payload: tuple[str, ...] = ()


@dataclass(frozen=True)
class PhysicalAccess:
    space: str
    key: str | None  # None means the space is open


@dataclass(frozen=True)
class Encryption:
    file: str
    key: str


@dataclass(frozen=True, order=True)
class AclAllow:
    firewall: str
    src: str
    dst: str
    service: str

    def __str__(self) -> str:
        return f"{self.firewall}[{self.src}->{self.dst}/{self.service}]"


SecurityRule = PhysicalAccess | Encryption | AclAllow


@dataclass(frozen=True)
class CyberspaceModel:
    name: str
    entities: tuple[Entity, ...]
    adjacency: frozenset[frozenset[str]]
    links: frozenset[frozenset[str]]
    base_rules: tuple[PhysicalAccess | Encryption, ...]
    initial_acl: tuple[AclAllow, ...]
    attacker_start: str
    goal: str
    atom_order: tuple[PermissionAtom, ...]
    reward_targets: Mapping[str, str] = field(default_factory=dict, compare=False, hash=False)

    @cached_property
    def by_id(self) -> dict[str, Entity]:
        return {e.id: e for e in self.entities}

    def of_class(self, cls: EntityClass) -> list[Entity]:
        return [e for e in self.entities if e.cls is cls]

    @property
    def spaces(self) -> list[Entity]:
        return self.of_class(EntityClass.SPACE)

    @property
    def devices(self) -> list[Entity]:
        return self.of_class(EntityClass.DEVICE)

    @property
    def ports(self) -> list[Entity]:
        return self.of_class(EntityClass.PORT)

    @property
    def services(self) -> list[Entity]:
        return self.of_class(EntityClass.SERVICE)

    @property
    def files(self) -> list[Entity]:
        return self.of_class(EntityClass.FILE)

    @property
    def info_items(self) -> list[Entity]:
        return self.of_class(EntityClass.INFO)

    @cached_property
    def atom_index(self) -> dict[PermissionAtom, int]:
        return {a: i for i, a in enumerate(self.atom_order)}

    def neighbours(self, space: str) -> list[str]:
        out = []
        for pair in self.adjacency:
            if space in pair and len(pair) == 2:
                (other,) = pair - {space}
                out.append(other)
        return sorted(out)

    def device_of(self, entity_id: str) -> str:
        """Device that ultimately hosts a port, service, file or device."""
        e = self.by_id[entity_id]
        while e.cls is not EntityClass.DEVICE:
            e = self.by_id[e.host]
        return e.id

    def service_port(self, service_id: str) -> str:
        return self.by_id[service_id].host

    def services_on(self, device_id: str) -> list[str]:
        return [s.id for s in self.services if self.device_of(s.id) == device_id]

    def files_storing(self, info_id: str) -> list[str]:
        return [f.id for f in self.files if info_id in f.payload]

    def space_keys(self, space_id: str) -> list[str]:
        return [r.key for r in self.base_rules
                if isinstance(r, PhysicalAccess) and r.space == space_id and r.key is not None]

    def file_keys(self, file_id: str) -> list[str]:
        return [r.key for r in self.base_rules if isinstance(r, Encryption) and r.file == file_id]

    @cached_property
    def goal_files(self) -> tuple[str, ...]:
        return tuple(self.files_storing(self.goal))

    @cached_property
    def routes(self) -> dict[tuple[str, str], tuple[frozenset[str], ...]]:
        """Firewall sets crossed by every simple route between two ports.

        Traffic moves along links and across forwarding devices (firewalls,
        routers, switches). Only inclusion-minimal firewall sets are kept.
        """
        return _enumerate_routes(self)


def _enumerate_routes(model: CyberspaceModel) -> dict[tuple[str, str], tuple[frozenset[str], ...]]:
    # Nodes are ports plus one hub node per forwarding device, so a route
    # crosses a device once instead of permuting through its ports.
    graph: dict[str, set[str]] = {p.id: set() for p in model.ports}
    for link in model.links:
        a, b = sorted(link)
        graph[a].add(b)
        graph[b].add(a)
    forwarding = {d.id for d in model.devices if d.kind in FORWARDING_KINDS}
    for p in model.ports:
        if p.host in forwarding:
            hub = "\0" + p.host
            graph.setdefault(hub, set()).add(p.id)
            graph[p.id].add(hub)
    firewalls = {d.id for d in model.devices if d.kind == "firewall"}
    owner = {p.id: p.host for p in model.ports}
    port_ids = [p.id for p in model.ports]

    routes: dict[tuple[str, str], set[frozenset[str]]] = {}

    def walk(src: str, node: str, seen: list[str]) -> None:
        if node in owner:
            fws = frozenset(owner[n] for n in seen if n in owner and owner[n] in firewalls)
            routes.setdefault((src, node), set()).add(fws)
        for nxt in sorted(graph[node]):
            if nxt not in seen:
                seen.append(nxt)
                walk(src, nxt, seen)
                seen.pop()

    for p in port_ids:
        walk(p, p, [p])

    minimal: dict[tuple[str, str], tuple[frozenset[str], ...]] = {}
    for key, sets in routes.items():
        keep = [s for s in sets if not any(o < s for o in sets)]
        minimal[key] = tuple(sorted(keep, key=lambda s: (len(s), sorted(s))))
    return minimal


# ---------------------------------------------------------------------------
# loading / dumping

_SECTIONS = ("spaces", "devices", "ports", "services", "files", "info")
_SECTION_CLASS = dict(zip(_SECTIONS, CLASS_ORDER))


def derive_atom_order(entities: Iterable[Entity]) -> tuple[PermissionAtom, ...]:
    """Entity declaration order crossed with the fixed kind order."""
    return tuple(PermissionAtom(e.id, k) for e in entities for k in _LEGAL_KINDS[e.cls])


def _as_list(value, what: str) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ScenarioParseError(f"section '{what}' must be a list")
    return value


def _pair(item, what: str) -> frozenset[str]:
    if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, str) for x in item)):
        raise ScenarioParseError(f"'{what}' entries must be two-element id lists, got {item!r}")
    if item[0] == item[1]:
        raise ScenarioValidationError(f"self-loop in {what}", item[0])
    return frozenset(item)


def _entity(cls: EntityClass, raw) -> Entity:
    if isinstance(raw, str):
        raw = {"id": raw}
    if not isinstance(raw, dict) or not isinstance(raw.get("id"), str):
        raise ScenarioParseError(f"{cls.value} entries need a string 'id', got {raw!r}")
    unknown = set(raw) - {"id", "kind", "location", "host", "port", "password", "payload"}
    if unknown:
        raise ScenarioParseError(f"unknown keys {sorted(unknown)} on {raw['id']}")
    host = raw.get("port") if cls is EntityClass.SERVICE else raw.get("host")
    return Entity(
        id=raw["id"],
        cls=cls,
        kind=raw.get("kind"),
        location=raw.get("location"),
        host=host,
        password=raw.get("password"),
        payload=tuple(raw.get("payload") or ()),
    )


def _rule(raw) -> PhysicalAccess | Encryption:
    if not isinstance(raw, dict):
        raise ScenarioParseError(f"rule must be a mapping, got {raw!r}")
    kind = raw.get("kind")
    if kind == "PhysicalAccess":
        key = raw.get("key", "open")
        return PhysicalAccess(raw.get("space"), None if key == "open" else key)
    if kind == "Encryption":
        return Encryption(raw.get("file"), raw.get("key"))
    raise ScenarioParseError(f"unknown rule kind {kind!r}")


def _acl(raw) -> AclAllow:
    try:
        return AclAllow(raw["firewall"], raw["src"], raw["dst"], raw["service"])
    except (KeyError, TypeError):
        raise ScenarioParseError(f"ACL entry needs firewall/src/dst/service, got {raw!r}") from None


def parse_scenario(doc: Mapping) -> CyberspaceModel:
    if not isinstance(doc, Mapping):
        raise ScenarioParseError("scenario document must be a mapping")
    entities = []
    for section in _SECTIONS:
        entities.extend(_entity(_SECTION_CLASS[section], r) for r in _as_list(doc.get(section), section))
    raw_atoms = doc.get("atoms")
    if raw_atoms is None:
        atoms = derive_atom_order(entities)
    else:
        try:
            atoms = tuple(PermissionAtom.parse(a) for a in _as_list(raw_atoms, "atoms"))
        except ValueError as exc:
            raise ScenarioParseError(str(exc)) from None
    model = CyberspaceModel(
        name=str(doc.get("name", "scenario")),
        entities=tuple(entities),
        adjacency=frozenset(_pair(p, "adjacency") for p in _as_list(doc.get("adjacency"), "adjacency")),
        links=frozenset(_pair(p, "links") for p in _as_list(doc.get("links"), "links")),
        base_rules=tuple(_rule(r) for r in _as_list(doc.get("rules"), "rules")),
        initial_acl=tuple(_acl(r) for r in _as_list(doc.get("acl"), "acl")),
        attacker_start=doc.get("attacker_start"),
        goal=doc.get("goal"),
        atom_order=atoms,
        reward_targets=dict(doc.get("reward_targets") or {}),
    )
    validate(model)
    return model


def load_scenario(source: str | bytes | Path) -> CyberspaceModel:
    """Parse and validate a scenario from a path or from document text."""
    if isinstance(source, Path):
        source = source.read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        source = source.decode("utf-8")
    elif "\n" not in source and Path(source).is_file():
        source = Path(source).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"malformed scenario document: {exc}") from None
    if doc is None:
        doc = {}
    return parse_scenario(doc)


def _entity_doc(e: Entity) -> dict:
    out: dict = {"id": e.id}
    if e.kind is not None:
        out["kind"] = e.kind
    if e.location is not None:
        out["location"] = e.location
    if e.host is not None:
        out["port" if e.cls is EntityClass.SERVICE else "host"] = e.host
    if e.cls is EntityClass.SERVICE:
        out["password"] = e.password
    if e.payload:
        out["payload"] = list(e.payload)
    return out


def scenario_document(model: CyberspaceModel) -> dict:
    doc: dict = {"name": model.name}
    for section in _SECTIONS:
        doc[section] = [_entity_doc(e) for e in model.of_class(_SECTION_CLASS[section])]
    doc["adjacency"] = sorted(sorted(p) for p in model.adjacency)
    doc["links"] = sorted(sorted(p) for p in model.links)
    rules = []
    for r in model.base_rules:
        if isinstance(r, PhysicalAccess):
            rules.append({"kind": "PhysicalAccess", "space": r.space, "key": r.key or "open"})
        else:
            rules.append({"kind": "Encryption", "file": r.file, "key": r.key})
    doc["rules"] = rules
    doc["acl"] = [{"firewall": a.firewall, "src": a.src, "dst": a.dst, "service": a.service}
                  for a in model.initial_acl]
    doc["attacker_start"] = model.attacker_start
    doc["goal"] = model.goal
    if model.reward_targets:
        doc["reward_targets"] = dict(model.reward_targets)
    doc["atoms"] = [str(a) for a in model.atom_order]
    return doc


def dump_scenario(model: CyberspaceModel) -> str:
    return yaml.safe_dump(scenario_document(model), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------------------
# validation

def validate(model: CyberspaceModel) -> None:
    """Raise ScenarioValidationError naming the first violated invariant."""
    if not model.entities:
        raise ScenarioValidationError("empty model")
    ids: dict[str, Entity] = {}
    for e in model.entities:
        if e.id in ids:
            raise ScenarioValidationError("duplicate entity id", e.id)
        ids[e.id] = e

    def expect(ref: str | None, cls: EntityClass | tuple[EntityClass, ...], owner: str, what: str):
        classes = cls if isinstance(cls, tuple) else (cls,)
        if ref is None or ref not in ids:
            raise ScenarioValidationError(f"{owner} references unknown {what}", str(ref))
        if ids[ref].cls not in classes:
            raise ScenarioValidationError(
                f"{owner}: {what} must be {'/'.join(c.value for c in classes)}", ref)

    for e in model.entities:
        if e.cls is EntityClass.DEVICE:
            expect(e.location, EntityClass.SPACE, e.id, "location")
        elif e.cls is EntityClass.PORT:
            expect(e.host, EntityClass.DEVICE, e.id, "host device")
        elif e.cls is EntityClass.SERVICE:
            expect(e.host, EntityClass.PORT, e.id, "port")
            if e.password is not None:
                expect(e.password, EntityClass.INFO, e.id, "password")
        elif e.cls is EntityClass.FILE:
            expect(e.host, (EntityClass.SERVICE, EntityClass.DEVICE), e.id, "host")
        if e.payload and e.cls not in (EntityClass.DEVICE, EntityClass.SERVICE, EntityClass.FILE):
            raise ScenarioValidationError("payload only allowed on devices, services and files", e.id)
        for item in e.payload:
            expect(item, EntityClass.INFO, e.id, "payload item")

    # host/location chains must terminate (forest)
    for e in model.entities:
        seen = {e.id}
        cur = e
        while cur.host is not None or cur.location is not None:
            nxt = cur.host if cur.host is not None else cur.location
            if nxt in seen:
                raise ScenarioValidationError("cycle in host/location references", e.id)
            seen.add(nxt)
            cur = ids[nxt]

    for pair in model.adjacency:
        for s in sorted(pair):
            expect(s, EntityClass.SPACE, "adjacency", "space")
    for pair in model.links:
        for p in sorted(pair):
            expect(p, EntityClass.PORT, "links", "port")

    for rule in model.base_rules:
        if isinstance(rule, PhysicalAccess):
            expect(rule.space, EntityClass.SPACE, "PhysicalAccess rule", "space")
            if rule.key is not None:
                expect(rule.key, EntityClass.INFO, "PhysicalAccess rule", "key")
        else:
            expect(rule.file, EntityClass.FILE, "Encryption rule", "file")
            expect(rule.key, EntityClass.INFO, "Encryption rule", "key")

    for acl in model.initial_acl:
        expect(acl.firewall, EntityClass.DEVICE, "AclAllow rule", "firewall")
        if ids[acl.firewall].kind != "firewall":
            raise ScenarioValidationError("AclAllow rule must name a firewall device", acl.firewall)
        expect(acl.src, EntityClass.PORT, "AclAllow rule", "source port")
        expect(acl.dst, EntityClass.PORT, "AclAllow rule", "destination port")
        expect(acl.service, EntityClass.SERVICE, "AclAllow rule", "destination service")
        if ids[acl.service].host != acl.dst:
            raise ScenarioValidationError("AclAllow service is not bound to the destination port", acl.service)

    expect(model.attacker_start, EntityClass.SPACE, "attacker_start", "space")
    expect(model.goal, EntityClass.INFO, "goal", "info item")
    for role, ref in model.reward_targets.items():
        expect(ref, EntityClass.DEVICE, f"reward_targets.{role}", "device")

    seen_atoms: set[PermissionAtom] = set()
    for atom in model.atom_order:
        if atom in seen_atoms:
            raise ScenarioValidationError("duplicate atom", str(atom))
        seen_atoms.add(atom)
        if atom.entity not in ids:
            raise ScenarioValidationError("atom references unknown entity", str(atom))
        if atom.kind not in _LEGAL_KINDS[ids[atom.entity].cls]:
            raise ScenarioValidationError("illegal permission kind for entity class", str(atom))
    missing = [a for a in derive_atom_order(model.entities) if a not in seen_atoms]
    if missing:
        raise ScenarioValidationError("atom order is missing an atom", str(missing[0]))


# ---------------------------------------------------------------------------
# benchmark audit

@dataclass
class BenchmarkReport:
    missing: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.missing

    def __str__(self) -> str:
        if self.ok:
            return "benchmark: all checks pass"
        return "benchmark: " + "; ".join(self.missing)


_BENCH_SPACES = ("P1", "P2", "P3", "P4")
_BENCH_DEVICES = ("T1", "T2", "D1", "FW1", "FW2", "R", "SW", "S1", "S2")
_BENCH_SERVICES = {
    # service: (host device, port, password)
    "T2_manager": ("T2", "T2_E0", None),
    "FW1_manager": ("FW1", "FW1_E2", "FW1_password"),
    "FW2_manager": ("FW2", "FW2_E2", "FW2_password"),
    "S1_web": ("S1", "S1_E0", "S1_web_password"),
    "S2_web": ("S2", "S2_E0", "S2_web_password"),
}


def _stored_on(model: CyberspaceModel, info: str) -> set[str]:
    """Devices holding ``info`` directly, in a hosted service, or in a hosted file."""
    out = set()
    for e in model.entities:
        if info in e.payload:
            out.add(model.device_of(e.id))
    return out


def validate_benchmark(model: CyberspaceModel) -> BenchmarkReport:
    report = BenchmarkReport()
    ids = model.by_id

    def has(eid: str, cls: EntityClass) -> bool:
        return eid in ids and ids[eid].cls is cls

    outer = model.attacker_start
    if not has(outer, EntityClass.SPACE):
        report.missing.append("outer space (attacker start)")
    for s in _BENCH_SPACES:
        if not has(s, EntityClass.SPACE):
            report.missing.append(f"space {s}")
    if sum(1 for _ in model.spaces) < 5:
        report.missing.append("five spaces")
    for d in _BENCH_DEVICES:
        if not has(d, EntityClass.DEVICE):
            report.missing.append(f"device {d}")
    for svc, (dev, port, pw) in _BENCH_SERVICES.items():
        if not has(svc, EntityClass.SERVICE):
            report.missing.append(f"service {svc}")
            continue
        if ids[svc].host != port or not has(port, EntityClass.PORT) or model.device_of(svc) != dev:
            report.missing.append(f"service {svc} placement ({dev}/{port})")
        if ids[svc].password != pw:
            report.missing.append(f"service {svc} password {pw}")

    def credential(info: str, device: str, where: str) -> None:
        if not has(info, EntityClass.INFO):
            report.missing.append(f"credential {info}")
        elif device not in _stored_on(model, info):
            report.missing.append(f"credential {info} placement ({where})")

    fw1_holders = _stored_on(model, "FW1_password") if has("FW1_password", EntityClass.INFO) else set()
    if not has("FW1_password", EntityClass.INFO):
        report.missing.append("credential FW1_password")
    elif not any(ids[d].location == "P2" for d in fw1_holders if d in ids):
        report.missing.append("credential FW1_password placement (reachable in P2)")
    credential("FW2_password", "T2", "stored on T2")
    credential("S1_web_password", "T2", "stored on T2")
    if not has("S2_web_password", EntityClass.INFO):
        report.missing.append("credential S2_web_password")
    elif not any("S2_web_password" in e.payload and "S1_web" in (e.id, e.host) for e in model.entities):
        report.missing.append("credential S2_web_password placement (stored on S1_web)")
    if not has(model.goal, EntityClass.INFO) or _stored_on(model, model.goal) != {"S2"}:
        report.missing.append("goal placement (security information stored on S2)")
    return report


# ---------------------------------------------------------------------------
# bundled scenarios

SCENARIO_DIR = Path(__file__).parent / "scenarios"
BENCHMARK_VARIANTS = {
    3: "benchmark.scn",
    4: "benchmark_r4.scn",
    5: "benchmark_r5.scn",
    6: "benchmark_r6.scn",
}


def bundled_path(name: str = "benchmark.scn") -> Path:
    return SCENARIO_DIR / name


def load_benchmark(rules: int = 3) -> CyberspaceModel:
    return load_scenario(bundled_path(BENCHMARK_VARIANTS[rules]))
