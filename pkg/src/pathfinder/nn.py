"""Small numpy neural-network core: dense layers, a GRU cell, Adam.

Everything runs in float64. Networks keep an ordered dict of named parameter
arrays; ``forward`` records what ``backward`` needs and ``backward`` returns a
gradient dict with the same keys and shapes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

Params = dict[str, np.ndarray]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class NoForwardPass(RuntimeError):
    pass


class Network:
    params: Params

    def __init__(self):
        self._cache = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Network":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone._cache = None
        return clone

    def zero_(self) -> None:
        for p in self.params.values():
            p[...] = 0.0

    def _require_cache(self):
        if self._cache is None:
            raise NoForwardPass("backward called without a recorded forward pass")
        return self._cache


class MLP(Network):
    """Fully connected stack with ReLU hidden layers."""

    def __init__(self, sizes: list[int], output: str = "linear", rng: np.random.Generator | None = None):
        super().__init__()
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        rng = rng if rng is not None else np.random.default_rng()
        self.sizes = list(sizes)
        self.output = output
        self.params = {}
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"W{i}"] = _uniform(rng, n_in, (n_in, n_out))
            self.params[f"b{i}"] = _uniform(rng, n_in, (n_out,))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = np.maximum(z, 0.0)
            elif self.output == "sigmoid":
                h = sigmoid(z)
            else:
                h = z
            acts.append(h)
        self.logits = z
        self._cache = acts
        return h

    def backward(self, grad_out: np.ndarray, grad_logits: np.ndarray | None = None) -> tuple[Params, np.ndarray]:
        """Parameter gradients and the gradient w.r.t. the input.

        ``grad_logits`` is an extra gradient on the pre-activation output.
        """
        acts = self._require_cache()
        g = np.atleast_2d(grad_out)
        if self.output == "sigmoid":
            y = acts[-1]
            g = g * y * (1.0 - y)
        if grad_logits is not None:
            g = g + grad_logits
        grads: Params = {}
        for i in reversed(range(self.n_layers)):
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
            if i > 0:
                g = g * (acts[i] > 0)
        return {k: grads[k] for k in self.params}, g


class GRUCell(Network):
    """Gated recurrent unit with update gate z, reset gate r, tanh candidate.

        z  = sigmoid(x Wz + h Uz + bz)
        r  = sigmoid(x Wr + h Ur + br)
        n  = tanh(x Wn + (r * h) Un + bn)
        h' = (1 - z) * n + z * h
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.n_in, self.n_hidden = n_in, n_hidden
        self.params = {}
        for g in "zrn":
            self.params[f"W{g}"] = _uniform(rng, n_in, (n_in, n_hidden))
            self.params[f"U{g}"] = _uniform(rng, n_hidden, (n_hidden, n_hidden))
            self.params[f"b{g}"] = _uniform(rng, n_hidden, (n_hidden,))

    def forward(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        x, h = np.atleast_2d(x), np.atleast_2d(h)
        if x.shape[1] != self.n_in or h.shape[1] != self.n_hidden:
            raise ValueError("GRU input/hidden width mismatch")
        p = self.params
        z = sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
        r = sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
        rh = r * h
        n = np.tanh(x @ p["Wn"] + rh @ p["Un"] + p["bn"])
        h_new = (1.0 - z) * n + z * h
        self._cache = (x, h, z, r, rh, n)
        return h_new

    def backward(self, grad_h_new: np.ndarray) -> tuple[Params, np.ndarray, np.ndarray]:
        """Parameter gradients plus gradients w.r.t. x and the previous hidden state."""
        x, h, z, r, rh, n = self._require_cache()
        p = self.params
        g = np.atleast_2d(grad_h_new)
        dn = g * (1.0 - z) * (1.0 - n * n)
        dz = g * (h - n) * z * (1.0 - z)
        drh = dn @ p["Un"].T
        dr = drh * h * r * (1.0 - r)
        dh = g * z + drh * r + dz @ p["Uz"].T + dr @ p["Ur"].T
        dx = dz @ p["Wz"].T + dr @ p["Wr"].T + dn @ p["Wn"].T
        grads = {
            "Wz": x.T @ dz, "Uz": h.T @ dz, "bz": dz.sum(0),
            "Wr": x.T @ dr, "Ur": h.T @ dr, "br": dr.sum(0),
            "Wn": x.T @ dn, "Un": rh.T @ dn, "bn": dn.sum(0),
        }
        return {k: grads[k] for k in p}, dx, dh


class PolicyNet(Network):
    """State -> GRU(32) -> 48 ReLU -> 48 ReLU -> per-action sigmoid score."""

    def __init__(self, n_state: int, n_actions: int, rng: np.random.Generator | None = None,
                 hidden: int = 32, width: int = 48):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng()
        self.n_state, self.n_actions, self.hidden = n_state, n_actions, hidden
        self.gru = GRUCell(n_state, hidden, rng)
        self.head = MLP([hidden, width, width, n_actions], output="sigmoid", rng=rng)
        self.params = {f"gru.{k}": v for k, v in self.gru.params.items()}
        self.params.update({f"head.{k}": v for k, v in self.head.params.items()})

    def copy(self) -> "PolicyNet":
        clone = PolicyNet.__new__(PolicyNet)
        clone.n_state, clone.n_actions, clone.hidden = self.n_state, self.n_actions, self.hidden
        clone.gru = self.gru.copy()
        clone.head = self.head.copy()
        clone.params = {f"gru.{k}": v for k, v in clone.gru.params.items()}
        clone.params.update({f"head.{k}": v for k, v in clone.head.params.items()})
        clone._cache = None
        return clone

    def initial_hidden(self, batch: int | None = None) -> np.ndarray:
        return np.zeros(self.hidden if batch is None else (batch, self.hidden))

    def forward(self, state: np.ndarray, hidden: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h_new = self.gru.forward(state, hidden)
        scores = self.head.forward(h_new)
        self._cache = True
        return scores, h_new

    @property
    def logits(self) -> np.ndarray:
        return self.head.logits

    def backward(self, grad_scores: np.ndarray, grad_hidden: np.ndarray | None = None,
                 grad_logits: np.ndarray | None = None) -> Params:
        self._require_cache()
        head_grads, g_h = self.head.backward(grad_scores, grad_logits)
        if grad_hidden is not None:
            g_h = g_h + grad_hidden
        gru_grads, _, _ = self.gru.backward(g_h)
        grads = {f"gru.{k}": v for k, v in gru_grads.items()}
        grads.update({f"head.{k}": v for k, v in head_grads.items()})
        return grads


class CriticNet(MLP):
    """(state, action vector) -> 48 ReLU -> 48 ReLU -> linear Q-value."""

    def __init__(self, n_state: int, n_actions: int, rng: np.random.Generator | None = None, width: int = 48):
        super().__init__([n_state + n_actions, width, width, 1], output="linear", rng=rng)
        self.n_state, self.n_actions = n_state, n_actions

    def q(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(state), np.atleast_2d(action)], axis=1)
        return self.forward(x)[:, 0]

    def backward_q(self, grad_q: np.ndarray) -> tuple[Params, np.ndarray]:
        """Parameter gradients and dQ/d(action) scaled by ``grad_q``."""
        grads, g_in = self.backward(np.asarray(grad_q, dtype=np.float64).reshape(-1, 1))
        return grads, g_in[:, self.n_state:]


def critic_loss(critic: CriticNet, states: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
    """Mean squared TD error (1/m) * sum_j (y_j - Q(s_j, a_j))^2."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size == 0:
        raise ValueError("empty batch")
    q = critic.q(states, actions)
    return float(np.mean((targets - q) ** 2))


def soft_update(target: Network | Params, online: Network | Params, tau: float) -> None:
    """In place: target <- tau * online + (1 - tau) * target."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    tp = target.params if isinstance(target, Network) else target
    op = online.params if isinstance(online, Network) else online
    if tp.keys() != op.keys():
        raise ValueError("parameter sets differ")
    for k, t in tp.items():
        o = op[k]
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch for {k}: {t.shape} vs {o.shape}")
        if tau == 1.0:
            t[...] = o
        elif tau != 0.0:
            t *= 1.0 - tau
            t += tau * o


def hard_update(target: Network, online: Network) -> None:
    soft_update(target, online, 1.0)


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, max_norm: float | None = None):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.max_norm = max_norm
        self.t = 0
        size = sum(v.size for v in params.values())
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, grads: Params) -> None:
        """Descend along ``grads``."""
        g = np.concatenate([np.ravel(grads[k]) for k in self.params])
        if self.max_norm is not None:
            norm = float(np.sqrt(g @ g))
            if norm > self.max_norm:
                g *= self.max_norm / norm
        self.t += 1
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * (g * g)
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        upd = (self.lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)
        off = 0
        for p in self.params.values():
            p -= upd[off:off + p.size].reshape(p.shape)
            off += p.size


# ---------------------------------------------------------------------------
# checkpoints: b"PFCK" | u32 version | u32 count | per array: u16 name length,
# name bytes, u8 ndim, u32 dims... ; then every array as little-endian float64
# in the same order.

_MAGIC = b"PFCK"
_VERSION = 1


def save_params(path: str | Path, params: Params) -> None:
    header = bytearray(_MAGIC)
    header += struct.pack("<II", _VERSION, len(params))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        header += struct.pack("<H", len(raw)) + raw
        header += struct.pack("<B", arr.ndim)
        header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path: str | Path) -> Params:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    shapes = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        shapes.append((name, dims))
    out: Params = {}
    for name, dims in shapes:
        size = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
        off += 8 * size
    return out
