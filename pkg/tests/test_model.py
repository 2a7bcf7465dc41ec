import dataclasses

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from pathfinder.model import (
    BENCHMARK_VARIANTS,
    AclAllow,
    EntityClass,
    PermissionAtom,
    PermissionKind,
    ScenarioParseError,
    ScenarioValidationError,
    bundled_path,
    derive_atom_order,
    dump_scenario,
    legal_kinds,
    load_benchmark,
    load_scenario,
    scenario_document,
    validate_benchmark,
)


def bench_doc():
    return yaml.safe_load(bundled_path().read_text())


def test_nine_permission_kinds():
    assert len(PermissionKind) == 9
    assert sum(len(legal_kinds(c)) for c in EntityClass) == 9


@pytest.mark.parametrize("cls,kinds", [
    (EntityClass.SPACE, {PermissionKind.SPACE_ENTER}),
    (EntityClass.DEVICE, {PermissionKind.OBJECT_USE, PermissionKind.OBJECT_DOMINATE}),
    (EntityClass.FILE, {PermissionKind.FILE_DOMINATE}),
    (EntityClass.PORT, {PermissionKind.PORT_USE, PermissionKind.PORT_DOMINATE}),
    (EntityClass.SERVICE, {PermissionKind.SERVICE_REACH, PermissionKind.SERVICE_DOMINATE}),
    (EntityClass.INFO, {PermissionKind.INFORMATION_KNOW}),
])
def test_legal_kinds(cls, kinds):
    assert legal_kinds(cls) == kinds
    assert legal_kinds(cls.value) == kinds


def test_atom_text_round_trip():
    atom = PermissionAtom("S2_web", PermissionKind.SERVICE_DOMINATE)
    assert PermissionAtom.parse(str(atom)) == atom


def test_benchmark_has_106_atoms(bench):
    assert len(bench.atom_order) == 106


@pytest.mark.parametrize("rules", sorted(BENCHMARK_VARIANTS))
def test_variants_load_and_pass_audit(rules):
    m = load_benchmark(rules)
    assert len(m.atom_order) == 106
    report = validate_benchmark(m)
    assert report.ok, str(report)


def test_every_atom_kind_is_legal(bench):
    for atom in bench.atom_order:
        assert atom.kind in legal_kinds(bench.by_id[atom.entity].cls)


def test_empty_model_rejected():
    with pytest.raises(ScenarioValidationError, match="empty model"):
        load_scenario("{}\n")
    with pytest.raises(ScenarioValidationError, match="empty model"):
        load_scenario("")


def test_acl_unknown_port_named():
    doc = bench_doc()
    doc["acl"].append({"firewall": "FW1", "src": "NOPE_E9", "dst": "FW1_E2", "service": "FW1_manager"})
    with pytest.raises(ScenarioValidationError) as exc:
        load_scenario(yaml.safe_dump(doc))
    assert exc.value.offending == "NOPE_E9"
    assert "NOPE_E9" in str(exc.value)


def test_acl_must_name_firewall():
    doc = bench_doc()
    doc["acl"].append({"firewall": "R", "src": "T1_E0", "dst": "FW1_E2", "service": "FW1_manager"})
    with pytest.raises(ScenarioValidationError, match="firewall"):
        load_scenario(yaml.safe_dump(doc))


def test_host_cycle_rejected():
    text = """
spaces: [outer]
devices: [{id: d, kind: computer, location: outer}]
ports: [{id: p, host: d}]
services: [{id: v, port: p}]
files: [{id: f1, host: f2}, {id: f2, host: f1}]
info: [g]
attacker_start: outer
goal: g
"""
    with pytest.raises(ScenarioValidationError):
        load_scenario(text)


def test_encryption_key_must_be_info():
    doc = bench_doc()
    doc["rules"].append({"kind": "Encryption", "file": "T1_notes", "key": "T1"})
    with pytest.raises(ScenarioValidationError, match="key"):
        load_scenario(yaml.safe_dump(doc))


def test_duplicate_atom_rejected():
    doc = bench_doc()
    doc["atoms"].append(doc["atoms"][0])
    with pytest.raises(ScenarioValidationError, match="duplicate atom"):
        load_scenario(yaml.safe_dump(doc))


def test_illegal_atom_pairing_rejected():
    doc = bench_doc()
    doc["atoms"].append("P1:FileDominate")
    with pytest.raises(ScenarioValidationError, match="illegal"):
        load_scenario(yaml.safe_dump(doc))


def test_malformed_document():
    with pytest.raises(ScenarioParseError):
        load_scenario("spaces: [outer\n")
    with pytest.raises(ScenarioParseError):
        load_scenario("- just\n- a list\n")


def test_load_accepts_path_and_bytes(bench):
    path = bundled_path()
    assert load_scenario(path) == bench
    assert load_scenario(str(path)) == bench
    assert load_scenario(path.read_bytes()) == bench


def test_load_is_deterministic():
    raw = bundled_path().read_bytes()
    a, b = load_scenario(raw), load_scenario(raw)
    assert a == b and a.atom_order == b.atom_order


@pytest.mark.parametrize("rules", sorted(BENCHMARK_VARIANTS))
def test_round_trip(rules):
    m = load_benchmark(rules)
    again = load_scenario(dump_scenario(m))
    assert again == m
    assert scenario_document(again) == scenario_document(m)


def test_derived_order_when_atoms_absent(tiny):
    assert tiny.atom_order == derive_atom_order(tiny.entities)
    assert [str(a) for a in tiny.atom_order] == [
        "outer:SpaceEnter", "room:SpaceEnter", "box:ObjectUse", "box:ObjectDominate", "flag:InformationKnow"]


def test_audit_flags_missing_service():
    doc = bench_doc()
    doc["services"] = [s for s in doc["services"] if s["id"] != "S2_web"]
    doc["files"] = [f for f in doc["files"] if f["id"] != "S2_secret"]
    doc["rules"] = [r for r in doc["rules"] if r.get("file") != "S2_secret"]
    doc["atoms"] = [a for a in doc["atoms"] if not a.startswith(("S2_web:", "S2_secret:"))]
    report = validate_benchmark(load_scenario(yaml.safe_dump(doc)))
    assert not report.ok
    assert any("S2_web" in line for line in report.missing)


def test_audit_flags_goal_moved_to_s1():
    doc = bench_doc()
    for f in doc["files"]:
        if f["id"] == "S2_secret":
            f["host"] = "S1_web"
    report = validate_benchmark(load_scenario(yaml.safe_dump(doc)))
    assert not report.ok
    assert any("goal placement" in line for line in report.missing)


def test_model_is_frozen(bench):
    with pytest.raises(dataclasses.FrozenInstanceError):
        bench.goal = "FW1_password"


def test_routes_cross_expected_firewalls(bench):
    assert frozenset({"FW1"}) in bench.routes[("D1_E0", "FW1_E2")]
    assert frozenset({"FW2"}) in bench.routes[("T2_S1", "FW2_E2")]
    assert all("FW2" in fws for fws in bench.routes[("T2_S1", "S2_E0")])


def test_acl_entries_are_ordered_values():
    a = AclAllow("FW1", "D1_E0", "FW1_E2", "FW1_manager")
    assert a == AclAllow("FW1", "D1_E0", "FW1_E2", "FW1_manager")
    assert str(a) == "FW1[D1_E0->FW1_E2/FW1_manager]"


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(5))))
def test_explicit_atom_order_is_kept(tiny, perm):
    atoms = [str(tiny.atom_order[i]) for i in perm]
    doc = scenario_document(tiny)
    doc["atoms"] = atoms
    m = load_scenario(yaml.safe_dump(doc))
    assert [str(a) for a in m.atom_order] == atoms
