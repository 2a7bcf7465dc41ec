import itertools

import numpy as np
import pytest
from conftest import LAB

from pathfinder.env import AttackEnv, Verb
from pathfinder.model import PermissionAtom, PermissionKind as K, load_benchmark, load_scenario
from pathfinder.oracle import (
    SearchBudgetExceeded,
    closure_reachable,
    distance_to,
    reachable_permissions,
    replay,
    shortest_attack_path,
)

# frozen from the oracle on the bundled variants
BENCH_LENGTHS = {3: 22, 4: 28, 5: 28, 6: 31}


def test_benchmark_path_stages(bench_env):
    path = shortest_attack_path(bench_env)
    assert path.length == BENCH_LENGTHS[3]
    text = [str(a) for a in path.actions]
    assert text[0] == "EnterSpace(P2)"
    acl_adds = [a for a in path.actions if a.verb is Verb.ACL_ADD]
    assert [a.target.firewall for a in acl_adds] == ["FW1", "FW2", "FW2"]
    order = [text.index(x) for x in (
        "AuthService(FW1_manager)", "AuthService(T2_manager)", "ExtractInfo(FW2_password)",
        "AuthService(S1_web)", "AuthService(S2_web)", "ExtractInfo(secret)")]
    assert order == sorted(order)
    assert path.terminal_reward == pytest.approx(500000 / path.length)
    assert replay(bench_env, path.actions) == path.rewards


def test_path_record(bench_env):
    path = shortest_attack_path(bench_env)
    rec = path.record()
    assert rec["length"] == path.length == len(rec["steps"])
    assert rec["steps"][0] == {"index": path.actions[0].index, "verb": "EnterSpace", "target": "P2",
                               "reward": -0.1}
    assert path.describe()[0].strip() == "1. EnterSpace(P2)"


def test_without_acl_add_unreachable(bench):
    env = AttackEnv(bench, exclude_verbs=[Verb.ACL_ADD])
    assert all(a.verb is not Verb.ACL_ADD for a in env.actions)
    assert shortest_attack_path(env) is None


@pytest.mark.parametrize("rules,length", sorted(BENCH_LENGTHS.items()))
def test_variant_lengths(rules, length):
    assert shortest_attack_path(load_benchmark(rules)).length == length


def test_degenerate_goal_next_door(tiny):
    path = shortest_attack_path(tiny)
    assert [str(a) for a in path.actions] == ["EnterSpace(room)", "UseDevice(box)"]
    assert path.terminal_reward == 250000.0


def test_depth_limit(lab):
    assert shortest_attack_path(lab, depth_limit=13) is None
    assert shortest_attack_path(lab, depth_limit=14).length == 14
    with pytest.raises(ValueError):
        shortest_attack_path(lab, depth_limit=0)


def test_budget_exceeded(bench):
    with pytest.raises(SearchBudgetExceeded) as exc:
        shortest_attack_path(bench, max_states=50)
    assert exc.value.frontier >= 0 and exc.value.visited > 50


def test_pruned_matches_exhaustive(tiny, lab):
    for m in (tiny, lab):
        assert shortest_attack_path(m, prune=True).length == shortest_attack_path(m, prune=False).length


def test_pruned_matches_exhaustive_variants():
    # harder variants of the lab: encrypted loot, key kept on the firewall manager
    variants = [
        LAB.replace("rules:\n", "rules:\n  - {kind: Encryption, file: loot, key: fw_pw}\n"),
        LAB.replace("  - {id: fw_mgr, port: fw_e2, password: fw_pw}",
                    "  - {id: fw_mgr, port: fw_e2, password: fw_pw, payload: [web_pw]}")
           .replace("payload: [fw_pw, web_pw]", "payload: [fw_pw]"),
    ]
    for doc in variants:
        m = load_scenario(doc)
        fast, slow = shortest_attack_path(m), shortest_attack_path(m, prune=False)
        assert fast is not None and fast.length == slow.length


def test_optimality_by_enumeration(tiny):
    """No action sequence shorter than the oracle length succeeds."""
    env = AttackEnv(tiny)
    best = shortest_attack_path(env).length
    for n in range(1, best):
        for seq in itertools.product(range(env.n_actions), repeat=n):
            s = env.reset()
            for a in seq:
                out = env.step(s, a)
                assert not out.success
                s = out.state


def test_optimality_lab_random_walks(lab):
    env = AttackEnv(lab)
    best = shortest_attack_path(env).length
    rng = np.random.default_rng(0)
    for _ in range(3000):
        s = env.reset()
        for t in range(1, best):
            feasible = np.flatnonzero(env.action_mask(s))
            out = env.step(s, int(rng.choice(feasible)))
            assert not out.success, t
            s = out.state


def test_reachable_depth_zero_and_one(bench_env):
    assert reachable_permissions(bench_env, 0) == set()
    one = reachable_permissions(bench_env, 1)
    s = bench_env.reset()
    expected = set()
    for i in np.flatnonzero(bench_env.action_mask(s)):
        out = bench_env.step(s, int(i))
        expected |= {bench_env.model.atom_order[j] for j in out.granted}
    assert one == expected == {PermissionAtom("P1", K.SPACE_ENTER), PermissionAtom("P2", K.SPACE_ENTER)}


def test_reachable_monotone_and_contains_goal(lab):
    env = AttackEnv(lab)
    sets = [reachable_permissions(env, d) for d in range(0, 16, 3)]
    for a, b in zip(sets, sets[1:]):
        assert a <= b
    goal = PermissionAtom("flag", K.INFORMATION_KNOW)
    assert goal not in reachable_permissions(env, 13)
    assert goal in reachable_permissions(env, 14)


def test_distance_to(bench_env):
    assert distance_to(bench_env, PermissionAtom("P2", K.SPACE_ENTER)) == 1
    assert distance_to(bench_env, PermissionAtom("FW1_password", K.INFORMATION_KNOW)) == 2
    assert distance_to(bench_env, PermissionAtom("secret", K.INFORMATION_KNOW)) == BENCH_LENGTHS[3]


def test_closure_excludes_locked_rooms(bench_env):
    closure = closure_reachable(bench_env)
    p4 = bench_env.model.atom_index[PermissionAtom("P4", K.SPACE_ENTER)]
    goal = bench_env.model.atom_index[PermissionAtom("secret", K.INFORMATION_KNOW)]
    assert not closure >> p4 & 1
    assert closure >> goal & 1
