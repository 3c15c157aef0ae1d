"""Local differential privacy on uploads.

Uploads are perturbed with i.i.d. zero-mean Laplace noise of scale delta;
the per-client sensitivity is bounded by 2 * share * eta * Z when every
embedding gradient step is clipped to L2 norm Z, giving a per-round privacy
budget epsilon = sensitivity / delta.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LdpConfig:
    enabled: bool = False
    delta: float = 0.3  # Laplace noise scale
    clip: float = 1.0  # gradient clipping threshold Z
    eta: float = 0.1  # embedding learning rate, enters the sensitivity bound

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.clip <= 0:
            raise ValueError("clip threshold must be > 0")


def sensitivity_bound(share_u: float, eta: float, Z: float) -> float:
    """Upper bound 2 * share_u * eta * Z on client u's global sensitivity."""
    if share_u < 0 or eta <= 0 or Z <= 0:
        raise ValueError("share must be >= 0; eta and Z must be > 0")
    return 2.0 * share_u * eta * Z


def laplace_noise(shape, delta: float, rng) -> np.ndarray:
    """Inverse-CDF Laplace(0, delta) draws from the given uniform stream."""
    u = rng.random(shape)
    # keep u strictly inside (0, 1) so neither log can hit -inf
    u = np.clip(u, 2.0 ** -53, 1.0 - 2.0 ** -53)
    return np.where(u < 0.5, delta * np.log(2.0 * u), -delta * np.log(2.0 * (1.0 - u)))


def perturb_upload(Q: np.ndarray, delta: float, rng) -> np.ndarray:
    """Add elementwise Laplace(0, delta) noise; delta = 0 is the identity.

    At delta = 0 the input is returned unchanged and the stream is not
    consumed, so a delta-0 run is bit-identical to a non-private one.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0.0:
        return Q
    return Q + laplace_noise(Q.shape, delta, rng)


def effective_epsilon(sensitivity: float, delta: float) -> float:
    """Per-round budget sensitivity / delta; infinite (non-private) at delta=0."""
    if sensitivity < 0 or delta < 0:
        raise ValueError("sensitivity and delta must be >= 0")
    if delta == 0.0:
        return math.inf
    return sensitivity / delta
