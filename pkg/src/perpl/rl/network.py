"""One-hidden-layer ReLU perceptron with hand-written backprop (float64, numpy)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN = 100


@dataclass
class MlpParams:
    w1: np.ndarray  # (n_in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, n_out)
    b2: np.ndarray  # (n_out,)

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, hidden: int = HIDDEN,
             out_scale: float = 0.0) -> MlpParams:
        """He-initialised hidden layer; output layer ``N(0, out_scale^2)`` (zero by default)."""
        w1 = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, hidden))
        w2 = rng.normal(0.0, out_scale, size=(hidden, n_out)) if out_scale > 0 else np.zeros((hidden, n_out))
        return cls(w1, np.zeros(hidden), w2, np.zeros(n_out))

    @classmethod
    def zeros(cls, n_in: int, n_out: int, hidden: int = HIDDEN) -> MlpParams:
        return cls(np.zeros((n_in, hidden)), np.zeros(hidden), np.zeros((hidden, n_out)), np.zeros(n_out))

    @property
    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    @property
    def shapes(self) -> dict[str, list[int]]:
        return {k: list(getattr(self, k).shape) for k in ("w1", "b1", "w2", "b2")}

    def copy(self) -> MlpParams:
        return MlpParams(*(a.copy() for a in self.arrays))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        z1 = x @ self.w1 + self.b1
        h = np.maximum(z1, 0.0)
        return h @ self.w2 + self.b2, (x, z1, h)

    def backward(self, dout: np.ndarray, cache: tuple) -> tuple[np.ndarray, ...]:
        """Gradients (w1, b1, w2, b2) given d(loss)/d(output)."""
        x, z1, h = cache
        dw2 = h.T @ dout
        db2 = dout.sum(axis=0)
        dz1 = (dout @ self.w2.T) * (z1 > 0.0)
        return x.T @ dz1, dz1.sum(axis=0), dw2, db2
