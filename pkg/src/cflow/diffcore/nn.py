"""Fully connected networks built on the autodiff tensor.

``Mlp`` is the single network class used everywhere: as a time-conditioned
velocity field (input ``d + 1``, output ``d``) and as a binary classifier
(input ``d``, output 1 logit). Hidden layers use tanh; the output layer is
linear. With ``widths == [in, out]`` the network is a single linear map,
which the integrator tests rely on.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["Mlp", "velocity_mlp", "bce_with_logits", "affine", "row_sq_error_mean"]

DEFAULT_HIDDEN = (64, 64, 64)


def affine(x, w: Tensor, b: Tensor) -> Tensor:
    """Fused linear layer x @ w + b (one tape node instead of two)."""
    xt = x if isinstance(x, Tensor) else Tensor(x)
    data = xt.data @ w.data + b.data

    def backward(out):
        if xt.requires_grad:
            xt._accumulate(out.grad @ w.data.T)
        if w.requires_grad:
            w._accumulate(xt.data.T @ out.grad)
        if b.requires_grad:
            b._accumulate(out.grad.sum(axis=0))

    return Tensor._result(data, (xt, w, b), backward, "affine")


def row_sq_error_mean(
    pred: Tensor,
    target: np.ndarray,
    weights: np.ndarray | None = None,
    normalized: bool = True,
) -> Tensor:
    """Mean of per-row squared L2 errors ||pred_i - target_i||^2.

    With ``weights`` the rows are combined as sum(w * e) / sum(w) when
    ``normalized`` (the batch form used in training) or mean(w * e)
    otherwise. Fused into one tape node to keep the step cheap.
    """
    t = np.asarray(target, dtype=np.float64)
    residual = pred.data - t
    errors = (residual * residual).sum(axis=1)
    n = errors.shape[0]
    if weights is None:
        value = errors.mean()
        coef = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if normalized:
            total = w.sum()
            value = (w * errors).sum() / total
            coef = w / total
        else:
            value = (w * errors).mean()
            coef = w / n

    def backward(out):
        if pred.requires_grad:
            pred._accumulate(out.grad * 2.0 * coef[:, None] * residual)

    return Tensor._result(np.asarray(value), (pred,), backward, "row_sq_error_mean")


class Mlp:
    """Multi-layer perceptron with tanh hidden activations, linear output.

    Weights are Glorot-normal initialized from a seeded generator so
    construction is bit-reproducible; biases start at zero.
    """

    def __init__(self, widths: list[int] | tuple[int, ...], seed: int = 0):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError(f"widths must list >= 2 positive sizes, got {widths}")
        self.widths = widths
        rng = np.random.default_rng(seed)
        self.layers: list[tuple[Tensor, Tensor]] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            w = Tensor(rng.normal(0.0, scale, size=(fan_in, fan_out)), requires_grad=True)
            b = Tensor(np.zeros(fan_out), requires_grad=True)
            self.layers.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x) -> Tensor:
        """Forward pass through the tape; ``x`` is (n, in_dim)."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.data.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeError(f"expected input (n, {self.in_dim}), got {h.shape}")
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = affine(h, w, b)
            if i != last:
                h = h.tanh()
        return h

    def forward_raw(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass; same op order as __call__, bit-identical."""
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeError(f"expected input (n, {self.in_dim}), got {h.shape}")
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.data + b.data
            if i != last:
                h = np.tanh(h)
        return h

    def velocity(self, t, x, raw: bool = False):
        """Evaluate the field at time ``t`` on points ``x`` (n, d).

        ``t`` may be a scalar or a per-row array; it is appended as an extra
        input column. ``raw=True`` skips the tape (used by the integrator).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim - 1:
            raise ShapeError(f"expected points (n, {self.in_dim - 1}), got {x.shape}")
        t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],)).reshape(-1, 1)
        if not np.all(np.isfinite(t_col)):
            raise ValueError("t must be finite")
        inputs = np.concatenate([x, t_col], axis=1)
        return self.forward_raw(inputs) if raw else self(inputs)

    # -- state ------------------------------------------------------------

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("state array count mismatch")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeError(f"state shape mismatch: {a.shape} vs {p.shape}")
            p.data = a.copy()
            p.grad = None

    def copy(self) -> "Mlp":
        clone = Mlp(self.widths, seed=0)
        clone.load_state_arrays(self.state_arrays())
        return clone


def velocity_mlp(d: int = 2, hidden: tuple[int, ...] = DEFAULT_HIDDEN, seed: int = 0) -> Mlp:
    """Time-conditioned velocity field: input (x, t), output a d-vector."""
    return Mlp([d + 1, *hidden, d], seed=seed)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, numerically stable.

    Fused node: forward uses mean(softplus(z) - y*z); the gradient is the
    closed form (sigmoid(z) - y) / n.
    """
    y = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    z = logits.data
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray((softplus - y * z).mean())

    def backward(out):
        if logits.requires_grad:
            sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
            logits._accumulate(out.grad * (sig - y) / z.size)

    return Tensor._result(value, (logits,), backward, "bce_with_logits")
