"""Elastic merging: the per-client adapter MLP and the merge operator.

A client blends its local item table Q_l with the downloaded global table
Q_g row by row:

    merged_i = (1 - rho_i) * Q_l_i + rho_i * Q_g_i,   rho_i in [0, 1]

The blend weights come from a small MLP ("adapter") applied row-wise to the
concatenation of the global-local discrepancy and the local table,
[Q_g - Q_l | Q_l], with rectifier hidden layers and a logistic output so
every rho_i lands in [0, 1]. Scheme family:

    SR  static replacement: rho = 1 (download overwrites local)
    SM  static merge: one fixed scalar rho shared by all clients
    DM  dynamic merge: adapter on the mean-pooled input row -> scalar rho
    EM  elastic merge: adapter on every row -> per-item rho vector
"""

from dataclasses import dataclass

import numpy as np

from .model import sigmoid

SCHEME_KINDS = ("SR", "SM", "DM", "EM")


@dataclass(frozen=True)
class MergeScheme:
    kind: str
    rho: float | None = None  # SM only

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; expected {SCHEME_KINDS}")
        if self.kind == "SM":
            if self.rho is None or not 0.0 <= self.rho <= 1.0:
                raise ValueError("SM requires a fixed scalar rho in [0, 1]")

    @property
    def uses_adapter(self) -> bool:
        return self.kind in ("DM", "EM")


class AdapterNet:
    """MLP mapping 2d-wide rows to merge weights in [0, 1].

    ``widths`` lists the input width followed by each layer's output width;
    the final width must be 1 (e.g. [32, 16, 8, 1] for d=16). Hidden
    activations are rectifiers (subgradient 0 at 0), the output activation is
    the logistic. Weights are Glorot-uniform, biases zero.
    """

    def __init__(self, widths, rng):
        widths = list(widths)
        if len(widths) < 2 or widths[-1] != 1:
            raise ValueError("adapter widths need >= 1 layer and output width 1")
        self.widths = widths
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_width(self) -> int:
        return self.widths[0]

    def params(self):
        """Flat list of parameter arrays (weights then biases, per layer)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def param_shapes(self):
        return [p.shape for p in self.params()]

    def _forward(self, x):
        pre = []
        h = x
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            h = sigmoid(z)[..., 0] if l == last else np.maximum(z, 0.0)
        return h, pre

    def forward(self, x) -> np.ndarray:
        """Row-wise merge weights for an (m, 2d) input; returns shape (m,)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValueError(
                f"adapter expects (m, {self.input_width}) input, got {x.shape}"
            )
        rho, _ = self._forward(x)
        return rho

    def backward(self, x, upstream):
        """Gradients of sum_i upstream_i * rho_i w.r.t. every weight and bias.

        Inputs are treated as frozen: no gradient is returned for x.
        """
        x = np.asarray(x, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (x.shape[0],):
            raise ValueError("upstream must have one entry per input row")
        rho, pre = self._forward(x)
        acts = [x]
        for z in pre[:-1]:
            acts.append(np.maximum(z, 0.0))
        # output layer: d loss / d z_L = upstream * rho * (1 - rho)
        delta = (upstream * rho * (1.0 - rho))[:, None]
        grads = [None] * (2 * len(self.weights))
        for l in range(len(self.weights) - 1, -1, -1):
            grads[2 * l] = acts[l].T @ delta
            grads[2 * l + 1] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l].T) * (pre[l - 1] > 0.0)
        return grads


def build_merge_input(Q_global, Q_local) -> np.ndarray:
    """Adapter input rows [Q_global - Q_local | Q_local], shape (m, 2d)."""
    if Q_global.shape != Q_local.shape:
        raise ValueError(
            f"shape mismatch: {Q_global.shape} vs {Q_local.shape}"
        )
    return np.concatenate([Q_global - Q_local, Q_local], axis=1)


def merge_models(rho, Q_global, Q_local) -> np.ndarray:
    """Row-wise convex blend (1 - rho) * Q_local + rho * Q_global.

    rho may be a scalar (broadcast to all rows, SM/DM) or an (m,) vector
    (EM). Computed in this two-term form so rho = 1 returns Q_global
    bit-exactly and rho = 0 returns Q_local bit-exactly.
    """
    if Q_global.shape != Q_local.shape:
        raise ValueError(
            f"shape mismatch: {Q_global.shape} vs {Q_local.shape}"
        )
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ValueError("rho must lie in [0, 1]")
    if rho.ndim == 1:
        if rho.shape[0] != Q_global.shape[0]:
            raise ValueError("rho length must equal the item count")
        rho = rho[:, None]
    elif rho.ndim != 0:
        raise ValueError("rho must be a scalar or a vector")
    return (1.0 - rho) * Q_local + rho * Q_global


def merged_prediction_linearity_check(
    p, Q_global, Q_local, rho_scalar: float, tol: float = 1e-10
) -> bool:
    """Check that the pre-sigmoid score is affine in the merge weight.

    Verifies p . merge(rho)_i == rho * (p . Qg_i) + (1 - rho) * (p . Ql_i)
    for every row, within tol. Holds for the linear score only, not after
    the sigmoid.
    """
    merged = merge_models(rho_scalar, Q_global, Q_local)
    lhs = merged @ p
    rhs = rho_scalar * (Q_global @ p) + (1.0 - rho_scalar) * (Q_local @ p)
    return bool(np.max(np.abs(lhs - rhs)) <= tol)


def default_adapter_widths(d: int):
    """Default adapter architecture for embedding dimension d."""
    return [2 * d, 16, 8, 1]
