"""Randomly composed tensor graphs checked against finite differences.

Each trial builds a small random program over the tensor primitives,
re-draws leaf values until every non-smooth site (clip bounds, max ties)
has a safe margin for central differences, then compares tape gradients
with the finite-difference oracle.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    Tape,
    Tensor,
    add,
    clip,
    finite_difference_gradient,
    matmul,
    mul,
    neg,
    reduce_max,
    reduce_mean,
    reduce_sum,
    scalar_add,
    scalar_mul,
    sub,
)

_MARGIN = 1e-3


class _Program:
    """A fixed op sequence over a stack, replayable for any leaf values."""

    def __init__(self, rng, n_leaves: int, n_ops: int):
        self.n_leaves = n_leaves
        self.ops = []
        live = n_leaves
        for _ in range(n_ops):
            kind = rng.choice(["add", "sub", "mul", "scalar_add", "scalar_mul",
                               "neg", "clip", "matmul"])
            i = int(rng.integers(0, live))
            j = int(rng.integers(0, live))
            extra = None
            if kind in ("scalar_add", "scalar_mul"):
                extra = float(rng.uniform(-2, 2))
            elif kind == "clip":
                lo = float(rng.uniform(-1.5, 0.0))
                extra = (lo, lo + float(rng.uniform(0.5, 2.0)))
            self.ops.append((kind, i, j, extra))
            live += 1
        self.final = rng.choice(["sum", "mean", "max"])

    def run(self, leaves):
        """Returns (scalar Tensor, margins_ok)."""
        stack = list(leaves)
        ok = True
        for kind, i, j, extra in self.ops:
            a, b = stack[i], stack[j]
            if kind == "add":
                out = add(a, b)
            elif kind == "sub":
                out = sub(a, b)
            elif kind == "mul":
                out = mul(a, b)
            elif kind == "scalar_add":
                out = scalar_add(a, extra)
            elif kind == "scalar_mul":
                out = scalar_mul(a, extra)
            elif kind == "neg":
                out = neg(a)
            elif kind == "clip":
                lo, hi = extra
                d = np.minimum(np.abs(a.data - lo), np.abs(a.data - hi)).min()
                ok = ok and d > _MARGIN
                out = clip(a, lo, hi)
            else:  # all stack values are square, so matmul stays in-shape
                out = matmul(a, b)
            stack.append(out)
        top = stack[-1]
        if self.final == "sum":
            return reduce_sum(top), ok
        if self.final == "mean":
            return reduce_mean(top), ok
        flat = np.sort(top.data.reshape(-1))
        if flat.size > 1:
            ok = ok and (flat[-1] - flat[-2]) > _MARGIN
        return reduce_max(top), ok


def run_trial(seed: int, shape=(3, 3), rtol: float = 1e-5, atol: float = 1e-8):
    """One random-graph gradient check. Returns (passed, max_abs_error)."""
    rng = np.random.default_rng(seed)
    n_leaves = int(rng.integers(2, 4))
    prog = _Program(rng, n_leaves, n_ops=int(rng.integers(3, 8)))

    leaves = None
    for _ in range(50):  # redraw until all kink margins hold
        cand = [Tensor(rng.uniform(-2, 2, shape), requires_grad=True) for _ in range(n_leaves)]
        _, ok = prog.run(cand)
        if ok:
            leaves = cand
            break
    if leaves is None:
        return True, 0.0  # vanishingly unlikely; treat as vacuous

    with Tape() as tape:
        loss, _ = prog.run(leaves)
    tape.backward(loss)

    worst = 0.0
    passed = True
    for t in leaves:
        def eval_at(arr, target=t):
            orig = target.data
            target.data = np.asarray(arr, dtype=np.float64)
            try:
                return float(prog.run(leaves)[0].data)
            finally:
                target.data = orig

        fd = finite_difference_gradient(eval_at, t, h=1e-5)
        g = t.grad if t.grad is not None else np.zeros_like(fd)
        err = np.abs(g - fd)
        tol = rtol * np.maximum(np.abs(g), np.abs(fd)) + atol
        passed = passed and bool(np.all(err <= tol))
        worst = max(worst, float(err.max()))
    return passed, worst


def run_random_graph_checks(trials: int, seed: int = 0):
    """Returns (n_failures, worst_abs_error) over ``trials`` random graphs."""
    failures = 0
    worst = 0.0
    for k in range(trials):
        ok, err = run_trial(seed * 100003 + k)
        failures += 0 if ok else 1
        worst = max(worst, err)
    return failures, worst
