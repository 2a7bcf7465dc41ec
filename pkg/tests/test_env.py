import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pathfinder.env import STEP_PENALTY, AttackEnv, EnvState, Verb, trace_line
from pathfinder.model import EntityClass, PermissionAtom, PermissionKind as K
from pathfinder.oracle import shortest_attack_path


def atom(env, entity, kind):
    return env.model.atom_index[PermissionAtom(entity, kind)]


def holds(perms, env, entity, kind):
    return bool(perms >> atom(env, entity, kind) & 1)


def reference_feasible(env, state, action):
    """Precondition table written out directly from the entity relations."""
    m, perms, v, t = env.model, state.permissions, action.verb, action.target
    has = lambda e, k: holds(perms, env, e, k)  # noqa: E731
    if v is Verb.STAY:
        return True
    if v is Verb.ENTER_SPACE:
        keys = [r.key for r in m.base_rules if getattr(r, "space", None) == t and r.key]
        return state.space in m.neighbours(t) and all(has(k, K.INFORMATION_KNOW) for k in keys)
    if v is Verb.USE_DEVICE:
        return has(m.by_id[t].location, K.SPACE_ENTER)
    if v is Verb.DOMINATE_DEVICE:
        return has(t, K.OBJECT_USE)
    if v is Verb.USE_PORT:
        host = m.by_id[t].host
        services = [s.id for s in m.services if m.by_id[s.host].host == host]
        return has(host, K.OBJECT_USE) or any(has(s, K.SERVICE_DOMINATE) for s in services)
    if v is Verb.DOMINATE_PORT:
        return has(t, K.PORT_USE) and has(m.by_id[t].host, K.OBJECT_DOMINATE)
    if v is Verb.REACH_SERVICE:
        dst = m.by_id[t].host
        active = {r for j, r in enumerate(env.acl_rules) if state.acl >> j & 1}
        for p in m.ports:
            if not has(p.id, K.PORT_USE):
                continue
            for fws in m.routes.get((p.id, dst), ()):
                if all(any(r.firewall == fw and r.src == p.id and r.dst == dst and r.service == t for r in active)
                       for fw in fws):
                    return True
        return False
    if v is Verb.AUTH_SERVICE:
        pw = m.by_id[t].password
        return has(t, K.SERVICE_REACH) and (pw is None or has(pw, K.INFORMATION_KNOW))
    if v is Verb.READ_FILE:
        host = m.by_id[t].host
        if m.by_id[host].cls is EntityClass.SERVICE:
            device = m.by_id[m.by_id[host].host].host
            return has(host, K.SERVICE_DOMINATE) or has(device, K.OBJECT_DOMINATE)
        return has(host, K.OBJECT_DOMINATE)
    if v is Verb.EXTRACT_INFO:
        for f in m.files:
            if t in f.payload and has(f.id, K.FILE_DOMINATE):
                keys = [r.key for r in m.base_rules if getattr(r, "file", None) == f.id]
                if all(has(k, K.INFORMATION_KNOW) for k in keys):
                    return True
        return False
    if v in (Verb.ACL_ADD, Verb.ACL_REMOVE):
        fw = t.firewall
        return any(has(s.id, K.SERVICE_DOMINATE) for s in m.services if m.by_id[s.host].host == fw)
    raise AssertionError(v)


def random_state(env, rng, density=None):
    density = rng.random() if density is None else density
    perms = 0
    for i in range(env.n_atoms):
        if rng.random() < density:
            perms |= 1 << i
    acl = int(rng.integers(0, 1 << len(env.acl_rules))) if env.acl_rules else 0
    space = env.model.spaces[int(rng.integers(len(env.model.spaces)))].id
    return EnvState(perms, acl, space)


def test_reset_is_all_zero(bench_env):
    s = bench_env.reset()
    assert s.permissions == 0 and s.space == "outer"
    assert s.acl == bench_env.initial_acl
    v = bench_env.state_vector(s)
    assert v.shape == (106,) and v.sum() == 0.0


def test_fresh_mask_is_enter_or_stay(bench_env):
    mask = bench_env.action_mask(bench_env.reset())
    allowed = [str(bench_env.actions[i]) for i in np.flatnonzero(mask)]
    assert sorted(allowed) == ["EnterSpace(P1)", "EnterSpace(P2)", "Stay"]


def test_enter_p2_sets_one_bit(bench_env):
    out = bench_env.step(bench_env.reset(), bench_env.find("EnterSpace", "P2"))
    assert out.feasible and out.reward == STEP_PENALTY
    v = bench_env.state_vector(out.state)
    assert v.sum() == 1.0
    assert v[atom(bench_env, "P2", K.SPACE_ENTER)] == 1.0
    assert out.state.space == "P2"


def test_fw1_manager_enables_acl_add(bench_env):
    s = EnvState(1 << atom(bench_env, "FW1_manager", K.SERVICE_DOMINATE), bench_env.initial_acl, "outer")
    mask = bench_env.action_mask(s)
    for a in bench_env.actions:
        if a.verb is Verb.ACL_ADD:
            assert mask[a.index] == (a.target.firewall == "FW1")


def test_full_permission_state(bench_env):
    full = EnvState((1 << bench_env.n_atoms) - 1, (1 << len(bench_env.acl_rules)) - 1, "P3")
    mask = bench_env.action_mask(full)
    for a in bench_env.actions:
        assert mask[a.index] == reference_feasible(bench_env, full, a)
    non_move = [a for a in bench_env.actions if a.verb is not Verb.ENTER_SPACE]
    assert all(mask[a.index] for a in non_move)


def test_mask_matches_reference(bench_env):
    rng = np.random.default_rng(7)
    for _ in range(300):
        s = random_state(bench_env, rng)
        mask = bench_env.action_mask(s)
        for a in bench_env.actions:
            assert mask[a.index] == reference_feasible(bench_env, s, a), (str(a), s)


def test_mask_matches_reference_lab(lab):
    env = AttackEnv(lab)
    rng = np.random.default_rng(3)
    for _ in range(500):
        s = random_state(env, rng)
        for a in env.actions:
            assert env.action_mask(s)[a.index] == reference_feasible(env, s, a)


def test_infeasible_is_noop(bench_env):
    s = bench_env.reset()
    a = bench_env.find("UseDevice", "S2")
    out = bench_env.step(s, a)
    assert not out.feasible and out.reward == STEP_PENALTY
    assert out.state.key == s.key
    assert out.state.steps_attack == 1 and out.state.steps_episode == 1


def test_index_out_of_range(bench_env):
    with pytest.raises(IndexError):
        bench_env.step(bench_env.reset(), bench_env.n_actions)
    with pytest.raises(IndexError):
        bench_env.step(bench_env.reset(), -1)


def test_reward_rules(bench_env):
    s = bench_env.reset()
    idx = lambda e, k: atom(bench_env, e, k)  # noqa: E731
    assert bench_env.reward_of(s, [PermissionAtom("S1_E0", K.PORT_USE)], 5) == 1.0
    assert bench_env.reward_of(s, [PermissionAtom("S2_E0", K.PORT_USE)], 5) == 1.0
    assert bench_env.reward_of(s, [], 5) == STEP_PENALTY
    assert bench_env.reward_of(s, [idx("S2_secret", K.FILE_DOMINATE)], 9) == 10.0
    assert bench_env.reward_of(s, [idx("S1_web", K.SERVICE_DOMINATE)], 9) == 5.0
    assert bench_env.reward_of(s, [idx("S2", K.OBJECT_DOMINATE)], 9) == 5.0
    assert bench_env.reward_of(s, [idx("secret", K.INFORMATION_KNOW)], 500000) == 1.0
    assert bench_env.reward_of(s, [idx("secret", K.INFORMATION_KNOW)], 1000) == 500.0
    # several matches: only the highest applies
    both = [idx("S1_web", K.SERVICE_DOMINATE), idx("S1_E0", K.PORT_USE)]
    assert bench_env.reward_of(s, both, 3) == 5.0


def test_reward_of_rejects_held_atom(bench_env):
    i = atom(bench_env, "P2", K.SPACE_ENTER)
    with pytest.raises(ValueError):
        bench_env.reward_of(EnvState(1 << i, 0, "P2"), [i], 1)


def test_success_after_1000_steps(bench_env):
    m = bench_env.model
    held = (1 << bench_env.n_atoms) - 1
    held &= ~(1 << atom(bench_env, m.goal, K.INFORMATION_KNOW))
    s = EnvState(held, bench_env.initial_acl, "P4", steps_attack=999, steps_episode=1500)
    out = bench_env.step(s, bench_env.find("ExtractInfo", m.goal))
    assert out.success and out.reward == 500.0 and out.attack_steps == 1000
    assert out.state == EnvState(0, bench_env.initial_acl, "outer", 0, 1501)


def test_episode_done_exactly_at_limit(tiny):
    env = AttackEnv(tiny, episode_limit=5)
    s = env.reset()
    flags = []
    for _ in range(5):
        out = env.step(s, env.find("Stay"))
        flags.append(out.done)
        s = out.state
    assert flags == [False] * 4 + [True]


def test_acl_restored_on_success(bench_env):
    path = shortest_attack_path(bench_env)
    s = bench_env.reset()
    for a in path.actions:
        out = bench_env.step(s, a)
        s = out.state
    assert out.success and s.acl == bench_env.initial_acl and s.permissions == 0


def test_state_vector_idempotent(bench_env):
    rng = np.random.default_rng(1)
    s = random_state(bench_env, rng, 0.4)
    a, b = bench_env.state_vector(s), bench_env.state_vector(s)
    assert np.array_equal(a, b)
    assert all(a[i] == float(s.has(i)) for i in range(bench_env.n_atoms))


def test_trace_line(bench_env):
    out = bench_env.step(bench_env.reset(), bench_env.find("EnterSpace", "P2"))
    fields = trace_line(3, 1, bench_env.find("EnterSpace", "P2"), out).split("\t")
    assert fields == ["3", "1", str(bench_env.find("EnterSpace", "P2").index), "EnterSpace", "P2", "-0.1", "1", "0"]


def test_action_table_deterministic(bench):
    a, b = AttackEnv(bench), AttackEnv(bench)
    assert a.actions == b.actions
    assert [x.index for x in a.actions] == list(range(a.n_actions))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 10**6), min_size=1, max_size=200))
def test_walk_properties(bench_env, seed, picks):
    """Determinism, monotone permissions within an attempt, reward bounds, counters."""
    env = bench_env
    s = env.reset()
    for p in picks:
        mask = env.action_mask(s)
        feasible = np.flatnonzero(mask)
        a = int(feasible[p % len(feasible)]) if p % 3 else p % env.n_actions
        out = env.step(s, a)
        assert out == env.step(s, a)
        assert out.feasible == bool(mask[a])
        r = out.reward
        assert r in (STEP_PENALTY, 1.0, 5.0, 10.0) or (out.success and 0 < r <= 500000)
        if not out.success:
            assert out.state.permissions & s.permissions == s.permissions
            assert out.state.steps_attack == s.steps_attack + 1
            if out.state.space != env.model.attacker_start:
                assert out.state.has(atom(env, out.state.space, K.SPACE_ENTER))
        assert out.state.steps_attack <= out.state.steps_episode
        s = out.state


def test_observation_layout(bench_env):
    env = bench_env
    s = env.reset()
    plain = env.observation(s)
    assert np.array_equal(plain, env.state_vector(s)) and plain.shape == (env.observation_size(),)
    full = env.observation(s, context=True)
    assert full.shape == (env.observation_size(True),)
    where = full[env.n_atoms:env.n_atoms + 5]
    spaces = [e.id for e in env.model.spaces]
    assert where.sum() == 1 and spaces[int(np.argmax(where))] == env.model.attacker_start
    acl = full[env.n_atoms + 5:]
    assert [bool(b) for b in acl] == [bool(s.acl >> j & 1) for j in range(len(env.acl_rules))]
    moved = env.step(s, env.find("EnterSpace", "P2")).state
    assert spaces[int(np.argmax(env.observation(moved, True)[env.n_atoms:env.n_atoms + 5]))] == "P2"
