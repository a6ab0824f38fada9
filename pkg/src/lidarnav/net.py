"""Dense value/advantage network with hand-rolled backprop and Adam.

The combine step is Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a'), so any
constant shift of the advantages cancels and the action ranking is carried
entirely by A.
"""

from __future__ import annotations

import json
import os
import tempfile
import zipfile

import numpy as np

CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class DenseLayer:
    def __init__(self, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        bound = 1.0 / np.sqrt(n_in)
        self.weights = rng.uniform(-bound, bound, size=(n_out, n_in))
        self.bias = rng.uniform(-bound, bound, size=n_out)
        self.activation = activation
        self._x = None
        self._pre = None
        self.grad_w = np.zeros_like(self.weights)
        self.grad_b = np.zeros_like(self.bias)

    def forward(self, x: np.ndarray, record: bool) -> np.ndarray:
        pre = x @ self.weights.T + self.bias
        if record:
            self._x = x
            self._pre = pre
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        return pre

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a recorded forward pass")
        if self.activation == "relu":
            grad_out = grad_out * (self._pre > 0)
        self.grad_w += grad_out.T @ self._x
        self.grad_b += grad_out.sum(axis=0)
        return grad_out @ self.weights

    def zero_grad(self):
        self.grad_w.fill(0.0)
        self.grad_b.fill(0.0)


class DuelingNet:
    """Shared trunk feeding a scalar value head and a per-action advantage head."""

    def __init__(
        self,
        state_dim: int = 11,
        action_dim: int = 8,
        hidden=(64, 64),
        head_hidden: int = 32,
        seed: int = 0,
    ):
        if state_dim <= 0 or action_dim <= 0:
            raise ValueError("dimensions must be positive")
        rng = np.random.default_rng(seed)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.hidden = tuple(hidden)
        self.head_hidden = head_hidden
        self.trunk = []
        n_in = state_dim
        for n_out in hidden:
            self.trunk.append(DenseLayer(n_in, n_out, "relu", rng))
            n_in = n_out
        self.value_head = [
            DenseLayer(n_in, head_hidden, "relu", rng),
            DenseLayer(head_hidden, 1, "identity", rng),
        ]
        self.advantage_head = [
            DenseLayer(n_in, head_hidden, "relu", rng),
            DenseLayer(head_hidden, action_dim, "identity", rng),
        ]
        self._recorded = False

    def layers(self) -> list:
        return self.trunk + self.value_head + self.advantage_head

    def parameters(self) -> list:
        params = []
        for layer in self.layers():
            params.append(layer.weights)
            params.append(layer.bias)
        return params

    def gradients(self) -> list:
        grads = []
        for layer in self.layers():
            grads.append(layer.grad_w)
            grads.append(layer.grad_b)
        return grads

    def zero_grad(self):
        for layer in self.layers():
            layer.zero_grad()

    @staticmethod
    def combine(value: np.ndarray, advantage: np.ndarray) -> np.ndarray:
        return value + advantage - advantage.mean(axis=-1, keepdims=True)

    def _as_batch(self, state: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(state, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.state_dim:
            raise ValueError(f"expected state dimension {self.state_dim}, got shape {x.shape}")
        return x, single

    def forward_parts(self, state, record: bool = False):
        x, single = self._as_batch(state)
        h = x
        for layer in self.trunk:
            h = layer.forward(h, record)
        v = h
        for layer in self.value_head:
            v = layer.forward(v, record)
        a = h
        for layer in self.advantage_head:
            a = layer.forward(a, record)
        q = self.combine(v, a)
        self._recorded = record
        if single:
            return v[0], a[0], q[0]
        return v, a, q

    def forward(self, state, record: bool = False) -> np.ndarray:
        return self.forward_parts(state, record)[2]

    def backward(self, grad_q: np.ndarray) -> None:
        """Accumulate parameter gradients for d(loss)/d(Q)."""
        if not self._recorded:
            raise RuntimeError("backward called without a recorded forward pass")
        g = np.asarray(grad_q, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grad_v = g.sum(axis=1, keepdims=True)
        grad_a = g - g.mean(axis=1, keepdims=True)
        for layer in reversed(self.value_head):
            grad_v = layer.backward(grad_v)
        for layer in reversed(self.advantage_head):
            grad_a = layer.backward(grad_a)
        grad_h = grad_v + grad_a
        for layer in reversed(self.trunk):
            grad_h = layer.backward(grad_h)
        self._recorded = False

    def clone(self) -> "DuelingNet":
        other = DuelingNet(
            self.state_dim, self.action_dim, self.hidden, self.head_hidden, seed=0
        )
        other.copy_from(self)
        return other

    def copy_from(self, source: "DuelingNet") -> None:
        for dst, src in zip(self.parameters(), source.parameters()):
            if dst.shape != src.shape:
                raise ValueError("topology mismatch")
            dst[...] = src

    def topology(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "head_hidden": self.head_hidden,
        }


class AdamState:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params: list, learning_rate: float = 5e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def apply(self, params: list, grads: list) -> None:
        for i, g in enumerate(grads):
            if not np.all(np.isfinite(g)):
                raise ValueError(
                    f"non-finite gradient in tensor {i} (shape {g.shape}): "
                    f"max |g| = {np.abs(g[np.isfinite(g)]).max() if np.isfinite(g).any() else 'n/a'}"
                )
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def optimize_step(net: DuelingNet, opt: AdamState) -> None:
    opt.apply(net.parameters(), net.gradients())
    net.zero_grad()


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean-squared error and its gradient w.r.t. pred."""
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(net: DuelingNet, opt: AdamState | None, path) -> None:
    """Atomic, versioned, bit-exact container: topology header + flat arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "topology": net.topology(),
        "optimizer": None
        if opt is None
        else {
            "learning_rate": opt.learning_rate,
            "betas": list(opt.betas),
            "eps": opt.eps,
            "step_count": opt.step_count,
        },
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for i, p in enumerate(net.parameters()):
        arrays[f"param_{i}"] = p
    if opt is not None:
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"adam_m_{i}"] = m
            arrays[f"adam_v_{i}"] = v
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expected_dims: tuple[int, int] | None = None):
    """Load (net, opt); corrupt files and topology mismatches are rejected."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"][()]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint version {meta.get('version')!r}"
                )
            topo = meta["topology"]
            if expected_dims is not None:
                want_state, want_action = expected_dims
                if topo["state_dim"] != want_state or topo["action_dim"] != want_action:
                    raise CheckpointError(
                        f"checkpoint dims ({topo['state_dim']}, {topo['action_dim']}) "
                        f"do not match expected {expected_dims}"
                    )
            net = DuelingNet(
                topo["state_dim"],
                topo["action_dim"],
                tuple(topo["hidden"]),
                topo["head_hidden"],
                seed=0,
            )
            for i, p in enumerate(net.parameters()):
                stored = data[f"param_{i}"]
                if stored.shape != p.shape:
                    raise CheckpointError(f"parameter {i} shape mismatch")
                p[...] = stored
            opt = None
            if meta["optimizer"] is not None:
                o = meta["optimizer"]
                opt = AdamState(
                    net.parameters(),
                    learning_rate=o["learning_rate"],
                    betas=tuple(o["betas"]),
                    eps=o["eps"],
                )
                opt.step_count = o["step_count"]
                for i in range(len(opt.m)):
                    opt.m[i][...] = data[f"adam_m_{i}"]
                    opt.v[i][...] = data[f"adam_v_{i}"]
            return net, opt
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
