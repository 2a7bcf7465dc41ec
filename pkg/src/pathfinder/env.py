"""Attack MDP over a cyberspace model.

States are permission bit sets plus the live firewall ACL and the attacker's
position. Transitions are deterministic; infeasible requests are answered as
no-ops with the default step penalty.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .model import AclAllow, CyberspaceModel, EntityClass, PermissionAtom, PermissionKind as K

SUCCESS_NUMERATOR = 500000.0
STEP_PENALTY = -0.1
DEFAULT_EPISODE_LIMIT = 10000


class Verb(str, enum.Enum):
    ENTER_SPACE = "EnterSpace"
    USE_DEVICE = "UseDevice"
    DOMINATE_DEVICE = "DominateDevice"
    USE_PORT = "UsePort"
    DOMINATE_PORT = "DominatePort"
    REACH_SERVICE = "ReachService"
    AUTH_SERVICE = "AuthService"
    READ_FILE = "ReadFile"
    EXTRACT_INFO = "ExtractInfo"
    ACL_ADD = "AclAdd"
    ACL_REMOVE = "AclRemove"
    STAY = "Stay"


@dataclass(frozen=True)
class AttackAction:
    index: int
    verb: Verb
    target: str | AclAllow | None

    def __str__(self) -> str:
        return self.verb.value if self.target is None else f"{self.verb.value}({self.target})"


@dataclass(frozen=True)
class EnvState:
    permissions: int  # bit i set <=> atom_order[i] granted
    acl: int  # bit j set <=> env.acl_rules[j] active
    space: str
    steps_attack: int = 0
    steps_episode: int = 0

    @property
    def key(self) -> tuple[int, int, str]:
        """Identity modulo step counters."""
        return (self.permissions, self.acl, self.space)

    def has(self, atom_index: int) -> bool:
        return bool(self.permissions >> atom_index & 1)


@dataclass(frozen=True)
class StepOutcome:
    state: EnvState
    reward: float
    success: bool
    done: bool
    feasible: bool
    granted: tuple[int, ...] = ()
    attack_steps: int | None = None  # attempt length, set on success


@dataclass(frozen=True)
class _Effect:
    grant: int = 0
    move_to: str | None = None
    acl_set: int = 0
    acl_clear: int = 0


def _bits(indices: Iterable[int]) -> int:
    out = 0
    for i in indices:
        out |= 1 << i
    return out


class AttackEnv:
    """Action table, precondition/effect compilation and the reward schedule.

    Methods are pure functions of their arguments; the instance only holds
    derived tables and a feasibility cache.
    """

    def __init__(
        self,
        model: CyberspaceModel,
        episode_limit: int = DEFAULT_EPISODE_LIMIT,
        exclude_verbs: Iterable[Verb | str] = (),
    ):
        if episode_limit < 1:
            raise ValueError("episode_limit must be >= 1")
        self.model = model
        self.episode_limit = episode_limit
        self.excluded = frozenset(Verb(v) for v in exclude_verbs)
        self.n_atoms = len(model.atom_order)
        self._idx = model.atom_index
        self.acl_rules = self._acl_universe()
        self._acl_bit = {r: j for j, r in enumerate(self.acl_rules)}
        self._space_index = {e.id: i for i, e in enumerate(model.spaces)}
        self.initial_acl = _bits(self._acl_bit[r] for r in model.initial_acl)
        self.actions: tuple[AttackAction, ...] = self._enumerate_actions()
        # service -> [(PortUse atom, [ACL bitmask per usable route])]
        self.reach_sources: dict[str, list[tuple[int, list[int]]]] = {}
        self._pre: list[Callable[[int, int, str], bool]] = []
        self._eff: list[_Effect] = []
        for a in self.actions:
            pre, eff = self._compile(a)
            self._pre.append(pre)
            self._eff.append(eff)
        self._rewards = self._reward_table()
        self._goal_bit = self.atom(model.goal, K.INFORMATION_KNOW)
        self._mask_cache: dict[tuple[int, int, str], np.ndarray] = {}

    # -- tables -----------------------------------------------------------

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def atom(self, entity: str, kind: K) -> int:
        return self._idx[PermissionAtom(entity, kind)]

    def rules_index(self, rule: AclAllow) -> int:
        return self._acl_bit[rule]

    def _acl_universe(self) -> tuple[AclAllow, ...]:
        """Every ACL entry an attacker could meaningfully write.

        Sources are ports of end hosts (non-forwarding devices) other than the
        service's own host; the firewall must sit on some route between them
        and expose a management service.
        """
        m = self.model
        managed = {m.device_of(s.id) for s in m.services}
        firewalls = [d.id for d in m.devices if d.kind == "firewall" and d.id in managed]
        end_ports = [p.id for p in m.ports if m.by_id[p.host].kind not in ("firewall", "router", "switch")]
        rules = set(m.initial_acl)
        for svc in m.services:
            dst = svc.host
            host = m.device_of(svc.id)
            for src in end_ports:
                if m.by_id[src].host == host:
                    continue
                crossed = set().union(*m.routes.get((src, dst), ()))
                for fw in firewalls:
                    if fw in crossed:
                        rules.add(AclAllow(fw, src, dst, svc.id))
        return tuple(sorted(rules))

    def _enumerate_actions(self) -> tuple[AttackAction, ...]:
        m = self.model
        raw: list[tuple[Verb, str | AclAllow | None]] = []
        raw += [(Verb.ENTER_SPACE, s.id) for s in m.spaces]
        for d in m.devices:
            raw += [(Verb.USE_DEVICE, d.id), (Verb.DOMINATE_DEVICE, d.id)]
        for p in m.ports:
            raw += [(Verb.USE_PORT, p.id), (Verb.DOMINATE_PORT, p.id)]
        for v in m.services:
            raw += [(Verb.REACH_SERVICE, v.id), (Verb.AUTH_SERVICE, v.id)]
        raw += [(Verb.READ_FILE, f.id) for f in m.files]
        raw += [(Verb.EXTRACT_INFO, i.id) for i in m.info_items if m.files_storing(i.id)]
        for r in self.acl_rules:
            raw += [(Verb.ACL_ADD, r), (Verb.ACL_REMOVE, r)]
        raw.append((Verb.STAY, None))
        kept = [(v, t) for v, t in raw if v not in self.excluded]
        return tuple(AttackAction(i, v, t) for i, (v, t) in enumerate(kept))

    def _compile(self, action: AttackAction) -> tuple[Callable[[int, int, str], bool], _Effect]:
        m, atom = self.model, self.atom
        verb, target = action.verb, action.target

        def need(bits: int) -> Callable[[int, int, str], bool]:
            return lambda perms, acl, space: perms & bits == bits

        def need_any(options: list[int]) -> Callable[[int, int, str], bool]:
            return lambda perms, acl, space: any(perms & b == b for b in options)

        if verb is Verb.ENTER_SPACE:
            keys = _bits(atom(k, K.INFORMATION_KNOW) for k in m.space_keys(target))
            adjacent = frozenset(m.neighbours(target))

            def pre(perms, acl, space, keys=keys, adjacent=adjacent):
                return space in adjacent and perms & keys == keys

            return pre, _Effect(grant=1 << atom(target, K.SPACE_ENTER), move_to=target)

        if verb is Verb.USE_DEVICE:
            dev = m.by_id[target]
            grant = 1 << atom(target, K.OBJECT_USE)
            grant |= _bits(atom(i, K.INFORMATION_KNOW) for i in dev.payload)
            return need(1 << atom(dev.location, K.SPACE_ENTER)), _Effect(grant=grant)

        if verb is Verb.DOMINATE_DEVICE:
            return need(1 << atom(target, K.OBJECT_USE)), _Effect(grant=1 << atom(target, K.OBJECT_DOMINATE))

        if verb is Verb.USE_PORT:
            host = m.by_id[target].host
            options = [1 << atom(host, K.OBJECT_USE)]
            options += [1 << atom(v, K.SERVICE_DOMINATE) for v in m.services_on(host)]
            return need_any(options), _Effect(grant=1 << atom(target, K.PORT_USE))

        if verb is Verb.DOMINATE_PORT:
            host = m.by_id[target].host
            bits = 1 << atom(target, K.PORT_USE) | 1 << atom(host, K.OBJECT_DOMINATE)
            return need(bits), _Effect(grant=1 << atom(target, K.PORT_DOMINATE))

        if verb is Verb.REACH_SERVICE:
            return self._reach_pre(target), _Effect(grant=1 << atom(target, K.SERVICE_REACH))

        if verb is Verb.AUTH_SERVICE:
            svc = m.by_id[target]
            bits = 1 << atom(target, K.SERVICE_REACH)
            if svc.password is not None:
                bits |= 1 << atom(svc.password, K.INFORMATION_KNOW)
            grant = 1 << atom(target, K.SERVICE_DOMINATE)
            grant |= _bits(atom(i, K.INFORMATION_KNOW) for i in svc.payload)
            return need(bits), _Effect(grant=grant)

        if verb is Verb.READ_FILE:
            f = m.by_id[target]
            options = [1 << atom(m.device_of(target), K.OBJECT_DOMINATE)]
            if m.by_id[f.host].cls is EntityClass.SERVICE:
                options.append(1 << atom(f.host, K.SERVICE_DOMINATE))
            return need_any(options), _Effect(grant=1 << atom(target, K.FILE_DOMINATE))

        if verb is Verb.EXTRACT_INFO:
            options = []
            for f in m.files_storing(target):
                bits = 1 << atom(f, K.FILE_DOMINATE)
                bits |= _bits(atom(k, K.INFORMATION_KNOW) for k in m.file_keys(f))
                options.append(bits)
            return need_any(options), _Effect(grant=1 << atom(target, K.INFORMATION_KNOW))

        if verb in (Verb.ACL_ADD, Verb.ACL_REMOVE):
            managers = [1 << atom(v, K.SERVICE_DOMINATE) for v in m.services_on(target.firewall)]
            bit = 1 << self._acl_bit[target]
            eff = _Effect(acl_set=bit) if verb is Verb.ACL_ADD else _Effect(acl_clear=bit)
            return need_any(managers), eff

        return (lambda perms, acl, space: True), _Effect()

    def _reach_pre(self, service: str) -> Callable[[int, int, str], bool]:
        m = self.model
        dst = m.service_port(service)
        # (source port bit, [acl bitmask required by each alternative route])
        sources: list[tuple[int, list[int]]] = []
        for p in m.ports:
            fw_sets = m.routes.get((p.id, dst))
            if not fw_sets:
                continue
            alternatives = []
            for fws in fw_sets:
                required = 0
                for fw in fws:
                    bit = self._acl_bit.get(AclAllow(fw, p.id, dst, service))
                    if bit is None:
                        break
                    required |= 1 << bit
                else:
                    alternatives.append(required)
            if alternatives:
                sources.append((1 << self.atom(p.id, K.PORT_USE), alternatives))
        self.reach_sources[service] = [(bit.bit_length() - 1, alts) for bit, alts in sources]

        def pre(perms, acl, space):
            for port_bit, alternatives in sources:
                if perms & port_bit:
                    for req in alternatives:
                        if acl & req == req:
                            return True
            return False

        return pre

    def _reward_table(self) -> np.ndarray:
        """Shaping value per atom; success is handled separately."""
        m = self.model
        values = np.full(self.n_atoms, STEP_PENALTY)

        def bump(entity: str, kind: K, value: float) -> None:
            i = self._idx.get(PermissionAtom(entity, kind))
            if i is not None:
                values[i] = max(values[i], value)

        for f in m.goal_files:
            bump(f, K.FILE_DOMINATE, 10.0)
        for role in ("goal_device", "pivot_device"):
            dev = m.reward_targets.get(role)
            if role == "goal_device" and dev is None and m.goal_files:
                dev = m.device_of(m.goal_files[0])
            if dev is None:
                continue
            bump(dev, K.OBJECT_DOMINATE, 5.0)
            for v in m.services_on(dev):
                bump(v, K.SERVICE_DOMINATE, 5.0)
            for p in m.ports:
                if p.host == dev:
                    bump(p.id, K.PORT_USE, 1.0)
        return values

    # -- MDP interface -----------------------------------------------------

    def reset(self) -> EnvState:
        return EnvState(0, self.initial_acl, self.model.attacker_start, 0, 0)

    def action_mask(self, state: EnvState) -> np.ndarray:
        """Boolean feasibility vector over the action table (read-only)."""
        key = state.key
        mask = self._mask_cache.get(key)
        if mask is None:
            perms, acl, space = key
            mask = np.fromiter((pre(perms, acl, space) for pre in self._pre), dtype=bool, count=self.n_actions)
            mask.flags.writeable = False
            if len(self._mask_cache) > 200_000:
                self._mask_cache.clear()
            self._mask_cache[key] = mask
        return mask

    def feasible(self, state: EnvState, action: int) -> bool:
        return bool(self.action_mask(state)[action])

    def reward_of(self, prev: EnvState, newly_granted: Iterable[PermissionAtom | int], t: int) -> float:
        """Single highest-value reward rule matched by the newly granted atoms."""
        indices = [a if isinstance(a, (int, np.integer)) else self._idx[a] for a in newly_granted]
        for i in indices:
            if prev.has(i):
                raise ValueError(f"atom {self.model.atom_order[i]} already granted")
        if self._goal_bit in indices:
            return SUCCESS_NUMERATOR / t
        if not indices:
            return STEP_PENALTY
        return float(max(self._rewards[i] for i in indices))

    def step(self, state: EnvState, action: AttackAction | int) -> StepOutcome:
        index = action.index if isinstance(action, AttackAction) else int(action)
        if not 0 <= index < self.n_actions:
            raise IndexError(f"action index {index} outside table of {self.n_actions}")
        steps_attack = state.steps_attack + 1
        steps_episode = state.steps_episode + 1
        done = steps_episode >= self.episode_limit
        if not self.action_mask(state)[index]:
            nxt = replace(state, steps_attack=steps_attack, steps_episode=steps_episode)
            return StepOutcome(nxt, STEP_PENALTY, False, done, False)

        eff = self._eff[index]
        new_bits = eff.grant & ~state.permissions
        granted = tuple(i for i in range(self.n_atoms) if new_bits >> i & 1) if new_bits else ()
        reward = self.reward_of(state, granted, steps_attack)
        if new_bits >> self._goal_bit & 1:
            # back to the outermost space for a fresh attempt; the episode clock keeps running
            nxt = EnvState(0, self.initial_acl, self.model.attacker_start, 0, steps_episode)
            return StepOutcome(nxt, reward, True, done, True, granted, steps_attack)
        nxt = EnvState(
            state.permissions | eff.grant,
            (state.acl | eff.acl_set) & ~eff.acl_clear,
            eff.move_to or state.space,
            steps_attack,
            steps_episode,
        )
        return StepOutcome(nxt, reward, False, done, True, granted)

    def state_vector(self, state: EnvState) -> np.ndarray:
        raw = state.permissions.to_bytes((self.n_atoms + 7) // 8, "little")
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        return bits[: self.n_atoms].astype(np.float64)

    def observation_size(self, context: bool = False) -> int:
        return self.n_atoms + (len(self._space_index) + len(self.acl_rules) if context else 0)

    def observation(self, state: EnvState, context: bool = False) -> np.ndarray:
        """State vector, optionally followed by a location one-hot and the active ACL bits."""
        bits = self.state_vector(state)
        if not context:
            return bits
        where = np.zeros(len(self._space_index))
        where[self._space_index[state.space]] = 1.0
        acl = np.array([state.acl >> j & 1 for j in range(len(self.acl_rules))], dtype=np.float64)
        return np.concatenate([bits, where, acl])

    # -- helpers -------------------------------------------------------------

    def granted_atoms(self, state: EnvState) -> list[PermissionAtom]:
        return [a for i, a in enumerate(self.model.atom_order) if state.has(i)]

    def active_acl(self, state: EnvState) -> list[AclAllow]:
        return [r for j, r in enumerate(self.acl_rules) if state.acl >> j & 1]

    def find(self, verb: Verb | str, target=None) -> AttackAction:
        verb = Verb(verb)
        for a in self.actions:
            if a.verb is verb and (target is None or a.target == target or str(a.target) == str(target)):
                return a
        raise KeyError(f"no action {verb.value}({target})")


def trace_line(episode: int, step: int, action: AttackAction, outcome: StepOutcome) -> str:
    target = "" if action.target is None else str(action.target)
    return "\t".join([
        str(episode), str(step), str(action.index), action.verb.value, target,
        repr(outcome.reward), str(int(outcome.feasible)), str(int(outcome.success)),
    ])
