"""Named parameter storage with freeze flags, and the Adam optimizer."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Param:
    value: np.ndarray
    frozen: bool = False
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)


class ParamTree:
    """Ordered ``name -> Param`` mapping.

    Frozen entries never accumulate gradient and are skipped by the
    optimizer, so their gradients stay exactly zero.
    """

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name, value, frozen=False):
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._entries[name] = Param(value, frozen)
        return self._entries[name]

    def __getitem__(self, name) -> Param:
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries.items())

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def value(self, name):
        return self._entries[name].value

    def accumulate(self, name, grad):
        p = self._entries[name]
        if not p.frozen:
            p.grad += grad

    def zero_grad(self):
        for p in self._entries.values():
            p.grad.fill(0.0)

    def set_frozen(self, prefix, frozen=True):
        for name, p in self._entries.items():
            if name.startswith(prefix):
                p.frozen = frozen

    def trainable_names(self):
        return [n for n, p in self._entries.items() if not p.frozen]

    def num_params(self):
        return sum(p.value.size for p in self._entries.values())

    def subtree(self, prefixes, rename=None):
        """Copy of the entries whose names start with one of ``prefixes``."""
        out = ParamTree()
        for name, p in self._entries.items():
            if any(name.startswith(pre) for pre in prefixes):
                new = rename(name) if rename else name
                out.add(new, p.value.copy(), p.frozen)
        return out

    def merge(self, other, prefix=""):
        for name, p in other:
            self.add(prefix + name, p.value.copy(), p.frozen)
        return self

    def copy(self):
        out = ParamTree()
        for name, p in self._entries.items():
            out.add(name, p.value.copy(), p.frozen)
        return out

    def digests(self):
        """SHA-256 of each tensor's bytes, for bitwise change detection."""
        return {n: hashlib.sha256(p.value.tobytes()).hexdigest() for n, p in self._entries.items()}

    def norms(self):
        return {n: float(np.linalg.norm(p.value)) for n, p in self._entries.items()}


def kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(int(np.prod(shape)), -bound, bound).reshape(shape)


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamTree, state: AdamState):
    """One bias-corrected Adam update of every non-frozen entry; zeroes all gradients."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params:
        if p.frozen:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (p.grad * p.grad)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grad()
