"""Breadth-first ground truth over the exact transition function.

The search runs on canonical states (permissions, ACL, position) and ignores
step counters. With ``prune=True`` three reductions are applied, each of which
keeps at least one shortest path in the search space:

* ``AclRemove`` is never expanded. Every precondition is monotone in the ACL,
  so dropping a removal from a path keeps the rest feasible.
* ``AclAdd(fw, src -> dst/svc)`` is expanded only while ``PortUse(src)`` is
  held, ``ServiceReach(svc)`` is not, and the entry is inactive. An addition in
  a shortest path can always be postponed to just before the reach it enables.
* Actions that neither move the attacker, touch the ACL, nor grant an atom
  relevant to the target are skipped. Relevance is the backward closure of
  preconditions from the target atom.

``prune=False`` expands every feasible action except Stay; tests use it to
cross-check the reductions on small scenarios.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .env import AttackAction, AttackEnv, EnvState, Verb
from .model import CyberspaceModel, PermissionAtom, PermissionKind as K

DEFAULT_DEPTH_LIMIT = 200
DEFAULT_MAX_STATES = 2_000_000


class SearchBudgetExceeded(RuntimeError):
    def __init__(self, visited: int, frontier: int):
        super().__init__(f"search budget exceeded: {visited} states visited, frontier size {frontier}")
        self.visited = visited
        self.frontier = frontier


@dataclass(frozen=True)
class AttackPath:
    actions: tuple[AttackAction, ...]
    rewards: tuple[float, ...] = field(default=())

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def terminal_reward(self) -> float:
        return self.rewards[-1] if self.rewards else 0.0

    def describe(self) -> list[str]:
        return [f"{i + 1:3d}. {a}" for i, a in enumerate(self.actions)]

    def record(self) -> dict:
        return {
            "length": self.length,
            "terminal_reward": self.terminal_reward,
            "steps": [
                {"index": a.index, "verb": a.verb.value,
                 "target": None if a.target is None else str(a.target), "reward": r}
                for a, r in zip(self.actions, self.rewards)
            ],
        }


def _as_env(model: CyberspaceModel | AttackEnv) -> AttackEnv:
    return model if isinstance(model, AttackEnv) else AttackEnv(model)


def relevant_atoms(env: AttackEnv, target: int) -> int:
    """Bitmask of atoms that can matter for granting ``target``."""
    m = env.model
    relevant = 1 << target
    space_bits = 0
    for s in m.spaces:
        space_bits |= 1 << env.atom(s.id, K.SPACE_ENTER)
    changed = True
    while changed:
        changed = False
        extra = 0
        for action in env.actions:
            eff = env._eff[action.index]
            if not eff.grant & relevant:
                continue
            extra |= _precondition_atoms(env, action)
        if relevant & space_bits:
            # movement may pass through any space, so every door key counts
            extra |= space_bits
            for s in m.spaces:
                for k in m.space_keys(s.id):
                    extra |= 1 << env.atom(k, K.INFORMATION_KNOW)
        if extra & ~relevant:
            relevant |= extra
            changed = True
    return relevant


def _precondition_atoms(env: AttackEnv, action: AttackAction) -> int:
    m, atom = env.model, env.atom
    verb, t = action.verb, action.target
    out = 0
    if verb is Verb.USE_DEVICE:
        out |= 1 << atom(m.by_id[t].location, K.SPACE_ENTER)
    elif verb is Verb.DOMINATE_DEVICE:
        out |= 1 << atom(t, K.OBJECT_USE)
    elif verb is Verb.USE_PORT:
        host = m.by_id[t].host
        out |= 1 << atom(host, K.OBJECT_USE)
        for v in m.services_on(host):
            out |= 1 << atom(v, K.SERVICE_DOMINATE)
    elif verb is Verb.DOMINATE_PORT:
        out |= 1 << atom(t, K.PORT_USE) | 1 << atom(m.by_id[t].host, K.OBJECT_DOMINATE)
    elif verb is Verb.REACH_SERVICE:
        for port_atom, alternatives in env.reach_sources[t]:
            out |= 1 << port_atom
            for required in alternatives:
                for j, rule in enumerate(env.acl_rules):
                    if required >> j & 1 and not env.initial_acl >> j & 1:
                        for v in m.services_on(rule.firewall):
                            out |= 1 << atom(v, K.SERVICE_DOMINATE)
    elif verb is Verb.AUTH_SERVICE:
        out |= 1 << atom(t, K.SERVICE_REACH)
        if m.by_id[t].password is not None:
            out |= 1 << atom(m.by_id[t].password, K.INFORMATION_KNOW)
    elif verb is Verb.READ_FILE:
        out |= 1 << atom(m.device_of(t), K.OBJECT_DOMINATE)
        host = m.by_id[t].host
        if host != m.device_of(t):
            out |= 1 << atom(host, K.SERVICE_DOMINATE)
    elif verb is Verb.EXTRACT_INFO:
        for f in m.files_storing(t):
            out |= 1 << atom(f, K.FILE_DOMINATE)
            for k in m.file_keys(f):
                out |= 1 << atom(k, K.INFORMATION_KNOW)
    return out


class _Search:
    def __init__(self, env: AttackEnv, target: int, prune: bool):
        self.env = env
        self.target = target
        self.target_bit = 1 << target
        self.goal_bit = 1 << env._goal_bit
        self.prune = prune
        self.relevant = relevant_atoms(env, target) if prune else -1
        self.candidates = []
        for a in env.actions:
            if a.verb is Verb.STAY:
                continue
            if prune and a.verb is Verb.ACL_REMOVE:
                continue
            self.candidates.append(a)
        self.acl_guard: dict[int, tuple[int, int, int]] = {}
        if prune:
            for a in self.candidates:
                if a.verb is Verb.ACL_ADD:
                    r = a.target
                    self.acl_guard[a.index] = (
                        1 << env.atom(r.src, K.PORT_USE),
                        1 << env.atom(r.service, K.SERVICE_REACH),
                        1 << env.rules_index(r),
                    )

    def successors(self, key: tuple[int, int, str]):
        env = self.env
        perms, acl, space = key
        pres, effs = env._pre, env._eff
        for a in self.candidates:
            i = a.index
            eff = effs[i]
            if self.prune:
                guard = self.acl_guard.get(i)
                if guard is not None:
                    port_bit, reach_bit, rule_bit = guard
                    if not perms & port_bit or perms & reach_bit or acl & rule_bit:
                        continue
                elif eff.move_to is None and not eff.grant & ~perms & self.relevant:
                    continue
            if not pres[i](perms, acl, space):
                continue
            new_perms = perms | eff.grant
            if new_perms & self.goal_bit and not self.target_bit & self.goal_bit:
                continue  # the attempt would end and reset
            nxt = (new_perms, (acl | eff.acl_set) & ~eff.acl_clear, eff.move_to or space)
            if nxt != key:
                yield a, nxt

    def run(self, depth_limit: int, max_states: int) -> list[AttackAction] | None:
        start = self.env.reset().key
        if start[0] & self.target_bit:
            return []
        parents: dict[tuple, tuple[tuple, AttackAction] | None] = {start: None}
        frontier = deque([(start, 0)])
        while frontier:
            key, depth = frontier.popleft()
            if depth >= depth_limit:
                continue
            for action, nxt in self.successors(key):
                if nxt in parents:
                    continue
                parents[nxt] = (key, action)
                if nxt[0] & self.target_bit:
                    return self._unwind(parents, nxt)
                if len(parents) > max_states:
                    raise SearchBudgetExceeded(len(parents), len(frontier))
                frontier.append((nxt, depth + 1))
        return None

    @staticmethod
    def _unwind(parents, key) -> list[AttackAction]:
        out = []
        while parents[key] is not None:
            key, action = parents[key]
            out.append(action)
        return out[::-1]


def replay(env: AttackEnv, actions: list[AttackAction] | tuple[AttackAction, ...]) -> tuple[float, ...]:
    """Run ``actions`` from reset; raise unless success lands exactly on the last step."""
    state = env.reset()
    rewards = []
    for n, action in enumerate(actions, start=1):
        out = env.step(state, action)
        if not out.feasible:
            raise AssertionError(f"step {n} ({action}) infeasible on replay")
        if out.success != (n == len(actions)):
            raise AssertionError(f"success flag wrong at step {n} ({action})")
        rewards.append(out.reward)
        state = out.state
    return tuple(rewards)


def shortest_attack_path(
    model: CyberspaceModel | AttackEnv,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_states: int = DEFAULT_MAX_STATES,
    prune: bool = True,
) -> AttackPath | None:
    """Minimum-length action sequence reaching the goal, or None if unreachable."""
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")
    env = _as_env(model)
    actions = _Search(env, env._goal_bit, prune).run(depth_limit, max_states)
    if actions is None:
        return None
    return AttackPath(tuple(actions), replay(env, actions))


def distance_to(
    model: CyberspaceModel | AttackEnv,
    atom: PermissionAtom,
    depth_limit: int = DEFAULT_DEPTH_LIMIT,
    max_states: int = DEFAULT_MAX_STATES,
    prune: bool = True,
) -> int | None:
    env = _as_env(model)
    actions = _Search(env, env.model.atom_index[atom], prune).run(depth_limit, max_states)
    return None if actions is None else len(actions)


def closure_reachable(env: AttackEnv) -> int:
    """Atoms grantable at any depth (monotone relaxation, ignores the reset on success)."""
    perms, acl = 0, env.initial_acl | ((1 << len(env.acl_rules)) - 1)
    spaces = {env.model.attacker_start}
    changed = True
    while changed:
        changed = False
        for a in env.actions:
            eff = env._eff[a.index]
            ok = any(env._pre[a.index](perms, acl, s) for s in spaces)
            if not ok:
                continue
            if eff.grant & ~perms:
                perms |= eff.grant
                changed = True
            if eff.move_to and eff.move_to not in spaces:
                spaces.add(eff.move_to)
                changed = True
    return perms


def reachable_permissions(
    model: CyberspaceModel | AttackEnv,
    depth_limit: int,
    max_states: int = DEFAULT_MAX_STATES,
) -> set[PermissionAtom]:
    """Atoms grantable within ``depth_limit`` steps of a reset."""
    env = _as_env(model)
    if depth_limit <= 0:
        return set()
    candidates = closure_reachable(env)
    out = set()
    for i, atom in enumerate(env.model.atom_order):
        if not candidates >> i & 1:
            continue
        actions = _Search(env, i, True).run(depth_limit, max_states)
        if actions is not None:
            out.add(atom)
    return out
