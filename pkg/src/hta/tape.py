"""Dense float64 tensors plus a minimal tape-based reverse-mode autodiff engine.

Values on the tape are plain numpy float64 arrays. Ops append nodes and return
integer node ids; each node remembers its parents together with a vjp closure.
Gradient accumulation walks the tape strictly in reverse id order, so two
backward passes over the same tape are bitwise identical.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

# Most-negative finite float64; stands in for -inf inside mask tensors so that
# ordinary arithmetic on masks never produces NaN. Converted to a hard "no
# attention" decision inside masked_softmax.
MASK_NEG = float(np.finfo(np.float64).min)


def is_masked(entries: np.ndarray) -> np.ndarray:
    """Boolean map of forbidden positions in an additive-mask payload."""
    return entries <= MASK_NEG


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def masked_softmax_value(logits: np.ndarray, mask_entries: np.ndarray) -> np.ndarray:
    """Row softmax of logits with positions forbidden by the mask forced to 0.

    Stabilized by subtracting the per-row max over *allowed* entries only.
    A fully masked row is a contract violation, never a silent NaN.
    """
    logits = _as_f64(logits)
    if logits.shape != mask_entries.shape:
        raise ValueError(
            f"logits shape {logits.shape} does not match mask shape {mask_entries.shape}"
        )
    forbidden = is_masked(mask_entries)
    z = np.where(forbidden, -np.inf, logits)
    m = z.max(axis=1, keepdims=True)   # max over allowed entries only
    if not np.isfinite(m).all():
        row = int(np.argmin(np.isfinite(m[:, 0])))
        raise ValueError(f"fully masked row {row}: softmax undefined")
    e = np.exp(z - m)                  # exp(-inf) = 0 at forbidden positions
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_value(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                     eps: float = 1e-5):
    """Last-axis layer norm; returns (output, normalized, inv_std) for reuse."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gain + bias, xhat, inv


class Tape:
    """Computation tape. One tape per training step; not thread-shared."""

    def __init__(self):
        self._vals: list[np.ndarray] = []
        self._parents: list[list] = []   # list of (parent_id, vjp closure)
        self._track: list[bool] = []     # participates in gradient flow

    # -- node plumbing ----------------------------------------------------

    def _push(self, value: np.ndarray, parents: list) -> int:
        self._vals.append(value)
        tracked = [(p, fn) for p, fn in parents if self._track[p]]
        self._parents.append(tracked)
        self._track.append(bool(tracked))
        return len(self._vals) - 1

    def value(self, nid: int) -> np.ndarray:
        return self._vals[nid]

    def leaf(self, value, requires_grad: bool = True) -> int:
        self._vals.append(_as_f64(value))
        self._parents.append([])
        self._track.append(requires_grad)
        return len(self._vals) - 1

    def constant(self, value) -> int:
        return self.leaf(value, requires_grad=False)

    # -- arithmetic primitives --------------------------------------------

    def add(self, a: int, b: int) -> int:
        av, bv = self._vals[a], self._vals[b]
        out = av + bv
        return self._push(out, [
            (a, lambda g, s=av.shape: _unbroadcast(g, s)),
            (b, lambda g, s=bv.shape: _unbroadcast(g, s)),
        ])

    def sub(self, a: int, b: int) -> int:
        av, bv = self._vals[a], self._vals[b]
        out = av - bv
        return self._push(out, [
            (a, lambda g, s=av.shape: _unbroadcast(g, s)),
            (b, lambda g, s=bv.shape: -_unbroadcast(g, s)),
        ])

    def mul(self, a: int, b: int) -> int:
        av, bv = self._vals[a], self._vals[b]
        out = av * bv
        return self._push(out, [
            (a, lambda g, o=bv, s=av.shape: _unbroadcast(g * o, s)),
            (b, lambda g, o=av, s=bv.shape: _unbroadcast(g * o, s)),
        ])

    def scale(self, a: int, c: float) -> int:
        av = self._vals[a]
        return self._push(av * c, [(a, lambda g, c=c: g * c)])

    def neg(self, a: int) -> int:
        return self.scale(a, -1.0)

    def matmul(self, a: int, b: int) -> int:
        av, bv = self._vals[a], self._vals[b]
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ValueError(
                f"matmul shape mismatch: {av.shape} x {bv.shape}"
            )
        out = av @ bv
        return self._push(out, [
            (a, lambda g, o=bv: g @ o.T),
            (b, lambda g, o=av: o.T @ g),
        ])

    def transpose(self, a: int) -> int:
        return self._push(self._vals[a].T, [(a, lambda g: g.T)])

    def sum(self, a: int) -> int:
        av = self._vals[a]
        return self._push(np.asarray(av.sum()),
                          [(a, lambda g, s=av.shape: np.broadcast_to(g, s).copy())])

    def exp(self, a: int) -> int:
        out = np.exp(self._vals[a])
        return self._push(out, [(a, lambda g, o=out: g * o)])

    # -- structural primitives ---------------------------------------------

    def take_rows(self, a: int, rows) -> int:
        av = self._vals[a]
        rows = np.asarray(rows, dtype=np.int64)

        def vjp(g, rows=rows, shape=av.shape):
            out = np.zeros(shape)
            np.add.at(out, rows, g)
            return out

        return self._push(av[rows], [(a, vjp)])

    def take_cols(self, a: int, start: int, stop: int) -> int:
        av = self._vals[a]

        def vjp(g, start=start, stop=stop, shape=av.shape):
            out = np.zeros(shape)
            out[:, start:stop] = g
            return out

        return self._push(av[:, start:stop], [(a, vjp)])

    def concat_rows(self, ids: list[int]) -> int:
        vals = [self._vals[i] for i in ids]
        sizes = [v.shape[0] for v in vals]
        offs = np.cumsum([0] + sizes)
        parents = []
        for k, nid in enumerate(ids):
            parents.append((nid, lambda g, a=offs[k], b=offs[k + 1]: g[a:b]))
        return self._push(np.concatenate(vals, axis=0), parents)

    def concat_cols(self, ids: list[int]) -> int:
        vals = [self._vals[i] for i in ids]
        sizes = [v.shape[1] for v in vals]
        offs = np.cumsum([0] + sizes)
        parents = []
        for k, nid in enumerate(ids):
            parents.append((nid, lambda g, a=offs[k], b=offs[k + 1]: g[:, a:b]))
        return self._push(np.concatenate(vals, axis=1), parents)

    def tile_rows(self, a: int, reps: int) -> int:
        """[n, d] -> [reps*n, d] by stacking copies (block order preserved)."""
        av = self._vals[a]
        n = av.shape[0]

        def vjp(g, n=n, reps=reps):
            return g.reshape(reps, n, -1).sum(axis=0)

        return self._push(np.tile(av, (reps, 1)), [(a, vjp)])

    def repeat_rows(self, a: int, reps: int) -> int:
        """[n, d] -> [n*reps, d] with each row repeated `reps` times."""
        av = self._vals[a]
        n = av.shape[0]

        def vjp(g, n=n, reps=reps):
            return g.reshape(n, reps, -1).sum(axis=1)

        return self._push(np.repeat(av, reps, axis=0), [(a, vjp)])

    # -- fused nonlinear primitives ------------------------------------------

    def layer_norm(self, x: int, gain: int, bias: int, eps: float = 1e-5) -> int:
        xv, gv, bv = self._vals[x], self._vals[gain], self._vals[bias]
        out, xhat, inv = layer_norm_value(xv, gv, bv, eps)
        d = xv.shape[-1]

        def vjp_x(g, xhat=xhat, inv=inv, gv=gv, d=d):
            gh = g * gv
            return inv * (gh - gh.mean(axis=-1, keepdims=True)
                          - xhat * (gh * xhat).mean(axis=-1, keepdims=True))

        return self._push(out, [
            (x, vjp_x),
            (gain, lambda g, xhat=xhat, s=gv.shape:
                _unbroadcast(g * xhat, s)),
            (bias, lambda g, s=bv.shape: _unbroadcast(g, s)),
        ])

    def masked_softmax(self, logits: int, mask_entries: np.ndarray) -> int:
        p = masked_softmax_value(self._vals[logits], mask_entries)

        def vjp(g, p=p):
            return p * (g - (g * p).sum(axis=1, keepdims=True))

        return self._push(p, [(logits, vjp)])

    def gelu(self, a: int) -> int:
        x = self._vals[a]
        phi = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        out = x * phi

        def vjp(g, x=x, phi=phi):
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            return g * (phi + x * pdf)

        return self._push(out, [(a, vjp)])

    def normalize_rows(self, a: int, eps: float = 0.0) -> int:
        x = self._vals[a]
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True)) + eps
        y = x / norm

        def vjp(g, y=y, norm=norm):
            return (g - y * (g * y).sum(axis=1, keepdims=True)) / norm

        return self._push(y, [(a, vjp)])

    def cross_entropy_diag(self, logits: int) -> int:
        """Mean over rows of [logsumexp(row) - row diagonal entry]."""
        z = self._vals[logits]
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise ValueError(f"expected square logits, got {z.shape}")
        n = z.shape[0]
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        out = np.asarray((lse - np.diag(z)).mean())
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)

        def vjp(g, p=p, n=n):
            return g * (p - np.eye(n)) / n

        return self._push(out, [(logits, vjp)])

    # -- reverse pass --------------------------------------------------------

    def backward(self, root: int) -> dict[int, np.ndarray]:
        """Gradients of a scalar root w.r.t. every tracked node on the tape."""
        rv = self._vals[root]
        if rv.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {rv.shape}")
        grads: dict[int, np.ndarray] = {root: np.ones_like(rv)}
        for nid in range(root, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            for pid, vjp in self._parents[nid]:
                contrib = vjp(g)
                if pid in grads:
                    grads[pid] = grads[pid] + contrib
                else:
                    # may be a view of g; callers must not mutate in place
                    grads[pid] = contrib
        return grads
