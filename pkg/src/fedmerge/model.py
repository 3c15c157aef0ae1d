"""Matrix-factorization core: prediction, BCE loss, gradients, optimizers.

The predictor is sigmoid(p . q_i) for user vector p (d,) and item table Q
(m, d). The loss is the summed binary cross-entropy over a batch of
(item, label) examples, computed in logit form so saturated predictions stay
finite and tiny losses keep their value instead of cancelling:

    loss(z, r) = softplus(z) - r * z = softplus((1 - 2r) * z),   z = p . q_i

with analytic gradients d/dp = sum (rhat - r) q_i and
d/dq_i = sum_{entries on i} (rhat - r) p. All arithmetic is float64.
"""

import numpy as np

try:
    import numba

    @numba.njit(cache=True, nogil=True)
    def _adam_fused(theta, g, m, v, one_minus_b1, one_minus_b2, a, b):
        for i in range(theta.size):
            gi = g[i]
            m[i] += one_minus_b1 * (gi - m[i])
            v[i] += one_minus_b2 * (gi * gi - v[i])
            theta[i] -= a * m[i] / (np.sqrt(v[i]) + b)

except ImportError:  # pragma: no cover - exercised only without numba
    _adam_fused = None


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out[0]) if scalar else out


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def predict(p, q):
    """Predicted interaction probability sigmoid(p . q)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return float(sigmoid(np.dot(p, q)))


def _check_batch(items, labels):
    items = np.asarray(items, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.float64)
    if items.size == 0:
        raise ValueError("empty batch")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be 0 or 1")
    return items, labels


def bce_loss(p, Q, items, labels) -> float:
    """Summed binary cross-entropy of a batch under (p, Q)."""
    items, labels = _check_batch(items, labels)
    z = Q[items] @ p
    return float(np.sum(softplus((1.0 - 2.0 * labels) * z)))


def bce_gradients(p, Q, items, labels):
    """Analytic BCE gradients.

    Returns (grad_p, grad_rows) where grad_rows maps each item present in the
    batch to its d-vector gradient; items not in the batch are absent.
    """
    items, labels = _check_batch(items, labels)
    z = Q[items] @ p
    resid = sigmoid(z) - labels
    grad_p = resid @ Q[items]
    uniq, inv = np.unique(items, return_inverse=True)
    sums = np.bincount(inv, weights=resid, minlength=len(uniq))
    grad_rows = {int(i): sums[k] * p for k, i in enumerate(uniq)}
    return grad_p, grad_rows


def batch_terms(p, Q, uniq, inv, labels):
    """Grouped batch pieces shared by the training loops.

    ``uniq``/``inv`` are the unique batch items and the expansion index
    (np.unique(items, return_inverse=True)). Returns (rows, residual_sums,
    grad_p, loss_sum): the unique item rows, per-unique-item residual sums
    (so grad_row[k] = residual_sums[k] * p), the user-vector gradient, and
    the summed batch loss.
    """
    rows = Q[uniq]
    z = (rows @ p)[inv]
    resid = sigmoid(z) - labels
    sums = np.bincount(inv, weights=resid, minlength=len(uniq))
    grad_p = sums @ rows
    loss = float(np.sum(softplus((1.0 - 2.0 * labels) * z)))
    return rows, sums, grad_p, loss


def clip_gradient(g, Z: float):
    """Rescale g onto the L2 ball of radius Z; identity inside the ball."""
    if Z <= 0:
        raise ValueError("clip threshold Z must be positive")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if not np.isfinite(norm):
        raise ValueError("non-finite gradient")
    if norm <= Z:
        return g
    return g * (Z / norm)


def clip_scale(sq_norm: float, Z: float) -> float:
    """Multiplier that clip_gradient would apply, from the squared norm."""
    if not np.isfinite(sq_norm):
        raise ValueError("non-finite gradient")
    norm = np.sqrt(sq_norm)
    return 1.0 if norm <= Z else Z / norm


class OptimizerState:
    """SGD or Adam over a list of parameter arrays.

    kind='sgd' applies theta <- theta - lr * g. kind='adam' applies the
    standard bias-corrected update (beta1=0.9, beta2=0.999, eps=1e-8) with
    moment buffers persisted across calls; the step count is shared across
    the parameter list.
    """

    def __init__(self, kind: str, shapes, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.kind = kind
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        if kind == "adam":
            self.m = [np.zeros(s) for s in shapes]
            self.v = [np.zeros(s) for s in shapes]
            self._scratch = None  # numpy-fallback workspace, allocated on use

    def apply(self, params, grads):
        """Update each params[i] in place from grads[i]."""
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        self.step_count += 1
        if self.kind == "sgd":
            for theta, g in zip(params, grads):
                if theta.shape != np.shape(g):
                    raise ValueError("shape mismatch in optimizer step")
                theta -= self.lr * g
            return params
        # bias-corrected update folded into two scalars:
        # theta -= lr * mhat / (sqrt(vhat) + eps)
        #        = (lr * sqrt(bc2) / bc1) * m / (sqrt(v) + eps * sqrt(bc2))
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        a = self.lr * np.sqrt(bc2) / bc1
        b = self.eps * np.sqrt(bc2)
        for i, (theta, g, m, v) in enumerate(zip(params, grads, self.m, self.v)):
            if theta.shape != np.shape(g):
                raise ValueError("shape mismatch in optimizer step")
            g = np.ascontiguousarray(g)
            if _adam_fused is not None and theta.flags.c_contiguous:
                _adam_fused(
                    theta.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                    1.0 - self.beta1, 1.0 - self.beta2, a, b,
                )
                continue
            if self._scratch is None:
                self._scratch = [np.empty_like(mm) for mm in self.m]
            s = self._scratch[i]
            # same update, one numpy pass per term:
            # m += (1-beta1) * (g - m); v += (1-beta2) * (g*g - v)
            np.subtract(g, m, out=s)
            s *= 1.0 - self.beta1
            m += s
            np.multiply(g, g, out=s)
            s -= v
            s *= 1.0 - self.beta2
            v += s
            np.sqrt(v, out=s)
            s += b
            np.divide(m, s, out=s)
            s *= a
            theta -= s
        return params


def init_user_vector(d: int, rng, std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, size=d)


def init_item_table(m: int, d: int, rng, std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, size=(m, d))
