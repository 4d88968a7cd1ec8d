"""Desk-scale classifiers with flat parameter vectors and analytic gradients.

Both models expose the same surface: init(rng) -> theta, loss/gradient on a
batch, predict, and accuracy.  Parameters live in a single dense vector so
model updates can flow through clip -> perturb -> sum -> sparsify unchanged.
Gradients are exact for the implemented cross-entropy losses and are checked
against central finite differences in the test suite.
"""

import numpy as np

__all__ = ["LogisticRegression", "Mlp"]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], num_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


class LogisticRegression:
    """Multinomial logistic regression on raw features."""

    def __init__(self, n_features: int, n_classes: int):
        if n_features < 1 or n_classes < 2:
            raise ValueError("need at least one feature and two classes")
        self.n_features = n_features
        self.n_classes = n_classes
        self.dim = n_classes * (n_features + 1)

    def init(self, rng: np.random.Generator, scale: float = 0.01) -> np.ndarray:
        return scale * rng.standard_normal(self.dim)

    def _unpack(self, theta: np.ndarray):
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got {theta.shape}")
        split = self.n_features * self.n_classes
        W = theta[:split].reshape(self.n_features, self.n_classes)
        b = theta[split:]
        return W, b

    def logits(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        W, b = self._unpack(theta)
        return X @ W + b

    def predict(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(theta, X), axis=1)

    def loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        logp = _log_softmax(self.logits(theta, X))
        return float(-logp[np.arange(y.shape[0]), y].mean())

    def gradient(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        logp = _log_softmax(self.logits(theta, X))
        dz = (np.exp(logp) - _one_hot(y, self.n_classes)) / y.shape[0]
        gW = X.T @ dz
        gb = dz.sum(axis=0)
        return np.concatenate([gW.ravel(), gb])

    def accuracy(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(theta, X) == y).mean())


class Mlp:
    """One-hidden-layer classifier with tanh or relu activation."""

    def __init__(self, n_features: int, n_hidden: int, n_classes: int,
                 activation: str = "tanh"):
        if activation not in ("tanh", "relu"):
            raise ValueError(f"activation must be 'tanh' or 'relu', got {activation!r}")
        if n_features < 1 or n_hidden < 1 or n_classes < 2:
            raise ValueError("invalid layer sizes")
        self.n_features = n_features
        self.n_hidden = n_hidden
        self.n_classes = n_classes
        self.activation = activation
        self._splits = np.cumsum([
            n_features * n_hidden, n_hidden, n_hidden * n_classes,
        ])
        self.dim = int(self._splits[-1] + n_classes)

    def init(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.standard_normal(self.n_features * self.n_hidden) / np.sqrt(self.n_features)
        b1 = np.zeros(self.n_hidden)
        w2 = rng.standard_normal(self.n_hidden * self.n_classes) / np.sqrt(self.n_hidden)
        b2 = np.zeros(self.n_classes)
        return np.concatenate([w1, b1, w2, b2])

    def _unpack(self, theta: np.ndarray):
        if theta.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got {theta.shape}")
        w1, b1, w2, b2 = np.split(theta, self._splits)
        W1 = w1.reshape(self.n_features, self.n_hidden)
        W2 = w2.reshape(self.n_hidden, self.n_classes)
        return W1, b1, W2, b2

    def _forward(self, theta: np.ndarray, X: np.ndarray):
        W1, b1, W2, b2 = self._unpack(theta)
        pre = X @ W1 + b1
        H = np.tanh(pre) if self.activation == "tanh" else np.maximum(pre, 0.0)
        return pre, H, H @ W2 + b2

    def predict(self, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.argmax(self._forward(theta, X)[2], axis=1)

    def loss(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        logp = _log_softmax(self._forward(theta, X)[2])
        return float(-logp[np.arange(y.shape[0]), y].mean())

    def gradient(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        W1, b1, W2, b2 = self._unpack(theta)
        pre, H, logits = self._forward(theta, X)
        logp = _log_softmax(logits)
        dz = (np.exp(logp) - _one_hot(y, self.n_classes)) / y.shape[0]
        gW2 = H.T @ dz
        gb2 = dz.sum(axis=0)
        dH = dz @ W2.T
        if self.activation == "tanh":
            dpre = dH * (1.0 - H * H)
        else:
            dpre = dH * (pre > 0.0)
        gW1 = X.T @ dpre
        gb1 = dpre.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def accuracy(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(theta, X) == y).mean())
