"""Dense float64 tensors with taped reverse-mode differentiation.

The engine is deliberately small: a :class:`Tensor` wraps an immutable numpy
array, a :class:`Tape` records every primitive application in execution
order, and :func:`backward` replays the record in reverse to accumulate
gradients for registered parameters. Primitives cover exactly what the
projection heads and the contrastive objectives need; nothing is fused, so a
finite-difference check (:func:`grad_check`) can validate any composition.

Conventions:
  - everything is float64; checked tapes reject non-finite constructions
  - matrices are 2-D, scalars have shape ()
  - row-wise ops (softmax, l2 normalize) act along the last axis
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateNormError, DimensionError

_NORM_FLOOR = 1e-12  # added under the sqrt in unchecked (training) mode
_DEGENERATE = 1e-30  # below this a row norm counts as zero in checked mode


class Tensor:
    """An immutable dense array of 64-bit reals."""

    __slots__ = ("data",)

    def __init__(self, data, checked=True):
        arr = np.array(data, dtype=np.float64)
        if checked and not np.all(np.isfinite(arr)):
            raise ContractError("tensor construction with non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _wrap(cls, arr):
        out = object.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(out, "data", arr)
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class _Node:
    __slots__ = ("output", "inputs", "vjp", "needs")

    def __init__(self, output, inputs, vjp, needs):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp
        self.needs = needs


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Ordered record of primitive applications.

    A tape is confined to one logical thread of execution. ``checked=True``
    (the default) rejects degenerate normalizations; training code uses
    ``checked=False`` which floors the norm instead.
    """

    def __init__(self, checked=True):
        self.checked = checked
        self._nodes: list[_Node] = []
        self._params: list[tuple[str, Tensor]] = []
        self._grad_ids: set[int] = set()

    # -- tensor creation ---------------------------------------------------

    def parameter(self, data, name=None) -> Tensor:
        t = data if isinstance(data, Tensor) else Tensor(data, checked=True)
        if name is None:
            name = f"p{len(self._params)}"
        if any(n == name for n, _ in self._params):
            raise ContractError(f"duplicate parameter name {name!r}")
        self._params.append((name, t))
        self._grad_ids.add(id(t))
        return t

    def constant(self, data) -> Tensor:
        if isinstance(data, Tensor):
            return data
        return Tensor(data, checked=self.checked)

    @property
    def parameters(self):
        return list(self._params)

    # -- recording ---------------------------------------------------------

    def _emit(self, out_arr, inputs, vjp) -> Tensor:
        out = Tensor._wrap(out_arr)
        needs = tuple(id(t) in self._grad_ids for t in inputs)
        if any(needs):
            self._grad_ids.add(id(out))
            self._nodes.append(_Node(out, inputs, vjp, needs))
        return out

    # -- primitives ----------------------------------------------------------

    def add(self, a, b) -> Tensor:
        a, b = self.constant(a), self.constant(b)
        out = a.data + b.data

        def vjp(g, needs):
            return (
                _unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None,
            )

        return self._emit(out, (a, b), vjp)

    def sub(self, a, b) -> Tensor:
        a, b = self.constant(a), self.constant(b)
        out = a.data - b.data

        def vjp(g, needs):
            return (
                _unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None,
            )

        return self._emit(out, (a, b), vjp)

    def hadamard(self, a, b) -> Tensor:
        a, b = self.constant(a), self.constant(b)
        out = a.data * b.data

        def vjp(g, needs):
            return (
                _unbroadcast(g * b.data, a.shape) if needs[0] else None,
                _unbroadcast(g * a.data, b.shape) if needs[1] else None,
            )

        return self._emit(out, (a, b), vjp)

    def scale(self, a, s: float) -> Tensor:
        a = self.constant(a)
        s = float(s)

        def vjp(g, needs):
            return (g * s if needs[0] else None,)

        return self._emit(a.data * s, (a,), vjp)

    def matmul(self, a, b) -> Tensor:
        a, b = self.constant(a), self.constant(b)
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g, needs):
            return (
                g @ b.data.T if needs[0] else None,
                a.data.T @ g if needs[1] else None,
            )

        return self._emit(out, (a, b), vjp)

    def transpose(self, a) -> Tensor:
        a = self.constant(a)
        if a.ndim != 2:
            raise DimensionError("transpose expects a 2-D tensor")

        def vjp(g, needs):
            return (g.T if needs[0] else None,)

        return self._emit(a.data.T, (a,), vjp)

    def concat(self, parts, axis=0) -> Tensor:
        parts = [self.constant(p) for p in parts]
        arrs = [p.data for p in parts]
        out = np.concatenate(arrs, axis=axis)
        sizes = [arr.shape[axis] for arr in arrs]
        bounds = np.cumsum(sizes)[:-1]

        def vjp(g, needs):
            pieces = np.split(g, bounds, axis=axis)
            return tuple(p if need else None for p, need in zip(pieces, needs))

        return self._emit(out, tuple(parts), vjp)

    def take_rows(self, a, indices) -> Tensor:
        a = self.constant(a)
        idx = np.asarray(indices, dtype=np.intp)
        out = a.data[idx]

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            return (full,)

        return self._emit(out, (a,), vjp)

    def masked_fill(self, a, mask, value) -> Tensor:
        a = self.constant(a)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise DimensionError(f"mask shape {mask.shape} != tensor shape {a.shape}")
        out = np.where(mask, value, a.data)

        def vjp(g, needs):
            return (np.where(mask, 0.0, g) if needs[0] else None,)

        return self._emit(out, (a,), vjp)

    def row_softmax(self, a) -> Tensor:
        """Softmax along the last axis, computed with row-max subtraction."""
        a = self.constant(a)
        shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=-1, keepdims=True)

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            inner = np.sum(g * out, axis=-1, keepdims=True)
            return (out * (g - inner),)

        return self._emit(out, (a,), vjp)

    def silu(self, a) -> Tensor:
        a = self.constant(a)
        sig = 1.0 / (1.0 + np.exp(-a.data))
        out = a.data * sig

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            return (g * sig * (1.0 + a.data * (1.0 - sig)),)

        return self._emit(out, (a,), vjp)

    def relu(self, a) -> Tensor:
        a = self.constant(a)
        out = np.maximum(a.data, 0.0)

        def vjp(g, needs):
            return (g * (a.data > 0.0) if needs[0] else None,)

        return self._emit(out, (a,), vjp)

    def absolute(self, a) -> Tensor:
        a = self.constant(a)

        def vjp(g, needs):
            return (g * np.sign(a.data) if needs[0] else None,)

        return self._emit(np.abs(a.data), (a,), vjp)

    def exp(self, a) -> Tensor:
        a = self.constant(a)
        out = np.exp(a.data)

        def vjp(g, needs):
            return (g * out if needs[0] else None,)

        return self._emit(out, (a,), vjp)

    def log(self, a) -> Tensor:
        a = self.constant(a)

        def vjp(g, needs):
            return (g / a.data if needs[0] else None,)

        return self._emit(np.log(a.data), (a,), vjp)

    def row_normalize(self, a) -> Tensor:
        """Scale each row (last axis) to unit l2 norm.

        Checked tapes raise on a (near-)zero row; unchecked tapes add a
        small floor under the square root so training cannot produce NaNs.
        """
        a = self.constant(a)
        sq = np.sum(a.data * a.data, axis=-1, keepdims=True)
        if self.checked:
            if np.any(sq <= _DEGENERATE):
                raise DegenerateNormError("l2-normalize of a zero row")
            sq_eff = sq
        else:
            sq_eff = sq + _NORM_FLOOR
        norm = np.sqrt(sq_eff)
        out = a.data / norm

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            inner = np.sum(g * a.data, axis=-1, keepdims=True)
            return (g / norm - a.data * (inner / (norm * sq_eff)),)

        return self._emit(out, (a,), vjp)

    def mean_reduce(self, a, axis=None, keepdims=False) -> Tensor:
        a = self.constant(a)
        out = np.mean(a.data, axis=axis, keepdims=keepdims)
        count = a.data.size if axis is None else a.data.shape[axis]

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            g = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy() / count,)

        return self._emit(out, (a,), vjp)

    def sum_reduce(self, a, axis=None, keepdims=False) -> Tensor:
        a = self.constant(a)
        out = np.sum(a.data, axis=axis, keepdims=keepdims)

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            g = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return self._emit(out, (a,), vjp)


def backward(tape: Tape, output: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``output`` for every parameter on ``tape``.

    Parameters that do not reach the output get zero gradients.
    """
    if output.shape != ():
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones((), dtype=np.float64)}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        contributions = node.vjp(g, node.needs)
        for inp, contrib in zip(node.inputs, contributions):
            if contrib is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return {
        name: grads.get(id(t), np.zeros_like(t.data)) for name, t in tape._params
    }


class GradCheckReport:
    """Outcome of a finite-difference comparison against taped gradients."""

    def __init__(self, max_rel_error, worst_param, passed, tol):
        self.max_rel_error = max_rel_error
        self.worst_param = worst_param
        self.passed = passed
        self.tol = tol

    def __repr__(self):
        state = "ok" if self.passed else "FAIL"
        return (
            f"GradCheckReport({state}, max_rel_error={self.max_rel_error:.3e}, "
            f"worst={self.worst_param!r}, tol={self.tol:g})"
        )


def grad_check(fn, params: dict[str, np.ndarray], eps=1e-5, tol=1e-5) -> GradCheckReport:
    """Compare taped gradients of ``fn`` against central finite differences.

    ``fn(tape, tensors)`` must build a scalar on the given tape from the
    dict of parameter tensors, and must be deterministic. The per-entry
    error is ``|fd - an| / max(1, |fd|, |an|)``, i.e. absolute for gradients
    of unit scale or below and relative above.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")

    def evaluate(arrays):
        tape = Tape(checked=False)
        tensors = {name: tape.parameter(arr, name) for name, arr in arrays.items()}
        out = fn(tape, tensors)
        value = float(out.data)
        if not np.isfinite(value):
            raise ContractError("function value is not finite during grad check")
        return tape, out, value

    tape, out, _ = evaluate(params)
    analytic = backward(tape, out)

    max_err = 0.0
    worst = None
    base = {name: np.array(arr, dtype=np.float64) for name, arr in params.items()}
    for name, arr in base.items():
        flat = arr.reshape(-1)
        an_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            _, _, f_plus = evaluate(base)
            flat[idx] = original - eps
            _, _, f_minus = evaluate(base)
            flat[idx] = original
            fd = (f_plus - f_minus) / (2.0 * eps)
            an = an_flat[idx]
            err = abs(fd - an) / max(1.0, abs(fd), abs(an))
            if err > max_err:
                max_err = err
                worst = (name, idx)
    return GradCheckReport(max_err, worst, max_err <= tol, tol)
