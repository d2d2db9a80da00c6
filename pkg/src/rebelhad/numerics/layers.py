"""Parameterized building blocks over a shared :class:`ParamTree`.

A layer only holds its configuration and a name prefix. ``forward`` returns
``(out, cache)``; ``backward(tree, dy, cache, need_dx)`` accumulates parameter
gradients into the tree (frozen entries are skipped) and returns the input
gradient, or None when ``need_dx`` is false.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .params import kaiming_uniform


class Conv2d:
    def __init__(self, name, cin, cout, k=1, stride=1, pad=0, transpose=False, output_padding=0):
        self.name = name
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.pad = stride, pad
        self.transpose = transpose
        self.output_padding = output_padding

    @property
    def wname(self):
        return f"{self.name}.weight"

    @property
    def bname(self):
        return f"{self.name}.bias"

    def init(self, tree, rng, frozen=False):
        if self.transpose:
            shape = (self.cin, self.cout, self.k, self.k)
        else:
            shape = (self.cout, self.cin, self.k, self.k)
        tree.add(self.wname, kaiming_uniform(rng, shape, self.cin * self.k * self.k), frozen)
        tree.add(self.bname, np.zeros(self.cout), frozen)

    def _trainable(self, tree):
        return not tree[self.wname].frozen

    def forward(self, tree, x):
        w, b = tree.value(self.wname), tree.value(self.bname)
        keep = self._trainable(tree)
        if self.transpose:
            return ops.conv2d_transpose_forward(x, w, b, self.stride, self.pad, self.output_padding, keep_input=keep)
        return ops.conv2d_forward(x, w, b, self.stride, self.pad, keep_cols=keep)

    def backward(self, tree, dy, cache, need_dx=True):
        train = self._trainable(tree)
        if not (train or need_dx):
            return None
        fn = ops.conv2d_transpose_backward if self.transpose else ops.conv2d_backward
        dx, dw, db = fn(dy, cache, need_dx=need_dx, need_dparams=train)
        if train:
            tree.accumulate(self.wname, dw)
            tree.accumulate(self.bname, db)
        return dx

    def param_names(self):
        return [self.wname, self.bname]


class ReLU:
    def forward(self, tree, x):
        return ops.relu(x), x

    def backward(self, tree, dy, cache, need_dx=True):
        return ops.relu_backward(dy, cache) if need_dx else None

    def init(self, tree, rng, frozen=False):
        pass

    def param_names(self):
        return []


class Sigmoid:
    def forward(self, tree, x):
        y = ops.sigmoid(x)
        return y, y

    def backward(self, tree, dy, cache, need_dx=True):
        return dy * cache * (1.0 - cache) if need_dx else None

    def init(self, tree, rng, frozen=False):
        pass

    def param_names(self):
        return []


class Sequential:
    def __init__(self, *layers):
        self.layers = list(layers)

    def init(self, tree, rng, frozen=False):
        for layer in self.layers:
            layer.init(tree, rng, frozen)

    def forward(self, tree, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(tree, x)
            caches.append(c)
        return x, caches

    def backward(self, tree, dy, caches, need_dx=True):
        for i in range(len(self.layers) - 1, -1, -1):
            dy = self.layers[i].backward(tree, dy, caches[i], need_dx=need_dx or i > 0)
            if dy is None:
                return None
        return dy

    def param_names(self):
        return [n for layer in self.layers for n in layer.param_names()]


class ResidualBlock:
    """``relu(x + conv3(relu(conv2(relu(conv1(x))))))`` with 3x3 convolutions."""

    def __init__(self, name, channels, transpose=False):
        self.name = name
        self.convs = [Conv2d(f"{name}.conv{i}", channels, channels, 3, 1, 1, transpose=transpose) for i in (1, 2, 3)]

    def init(self, tree, rng, frozen=False):
        for conv in self.convs:
            conv.init(tree, rng, frozen)

    def forward(self, tree, x):
        a1, c1 = self.convs[0].forward(tree, x)
        r1 = ops.relu(a1)
        a2, c2 = self.convs[1].forward(tree, r1)
        r2 = ops.relu(a2)
        a3, c3 = self.convs[2].forward(tree, r2)
        pre = x + a3
        return ops.relu(pre), (c1, c2, c3, a1, a2, pre)

    def backward(self, tree, dy, cache, need_dx=True):
        c1, c2, c3, a1, a2, pre = cache
        trainable = not tree[self.convs[0].wname].frozen
        if not (trainable or need_dx):
            return None
        dpre = ops.relu_backward(dy, pre)
        d = self.convs[2].backward(tree, dpre, c3, need_dx=True)
        d = self.convs[1].backward(tree, ops.relu_backward(d, a2), c2, need_dx=True)
        d = self.convs[0].backward(tree, ops.relu_backward(d, a1), c1, need_dx=need_dx)
        return dpre + d if need_dx else None

    def param_names(self):
        return [n for c in self.convs for n in c.param_names()]


class SEBlock:
    def __init__(self, name, channels, reduction):
        if channels % reduction:
            raise ValueError(f"{channels} channels not divisible by reduction {reduction}")
        self.name = name
        self.channels = channels
        self.hidden = channels // reduction
        self.fc1 = Conv2d(f"{name}.fc1", channels, self.hidden, 1)
        self.fc2 = Conv2d(f"{name}.fc2", self.hidden, channels, 1)

    def init(self, tree, rng, frozen=False):
        self.fc1.init(tree, rng, frozen)
        self.fc2.init(tree, rng, frozen)

    def forward(self, tree, x):
        return ops.se_forward(
            x,
            tree.value(self.fc1.wname), tree.value(self.fc1.bname),
            tree.value(self.fc2.wname), tree.value(self.fc2.bname),
        )

    def backward(self, tree, dy, cache, need_dx=True):
        dx, (dw1, db1, dw2, db2) = ops.se_backward(dy, cache, need_dx=need_dx)
        tree.accumulate(self.fc1.wname, dw1)
        tree.accumulate(self.fc1.bname, db1)
        tree.accumulate(self.fc2.wname, dw2)
        tree.accumulate(self.fc2.bname, db2)
        return dx

    def param_names(self):
        return self.fc1.param_names() + self.fc2.param_names()


def residual_block(x, params, prefix="res"):
    """Functional residual block reading ``{prefix}.conv{1,2,3}`` from ``params``."""
    return ResidualBlock(prefix, x.shape[1]).forward(params, x)[0]
