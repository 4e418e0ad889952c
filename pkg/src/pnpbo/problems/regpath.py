"""Regularization-path logistic regression with exponential ridge weights.

Two layouts:

``per-feature`` (binary labels in {-1, +1}), ``dim_x = dim_y = d``::

    G_j = phi(b_j a_j'theta) + 1/2 sum_k exp(lam_k) theta_k^2,  phi(t) = log(1 + e^-t)

``per-class`` (labels in {0..C-1}), ``theta`` is ``C x d``, ``dim_x = C``::

    G_j = CE(theta a_j, y_j) + sum_c exp(lam_c) ||theta_c||^2

``F_i`` is the same data loss on validation rows without the penalty.
"""

import numpy as np
from scipy import sparse
from scipy.special import expit, log_softmax, softmax

from ..model import BilevelProblem


def logistic_loss(t):
    """``log(1 + exp(-t))`` computed stably."""
    return np.logaddexp(0.0, -t)


def logistic_d1(t):
    return -expit(-t)


def logistic_d2(t):
    s = expit(t)
    return s * (1.0 - s)


def _dense(X):
    return X.toarray() if sparse.issparse(X) else np.asarray(X, dtype=float)


class RegPathLogReg(BilevelProblem):
    """Bilevel regularization-path problem; ``kind`` is ``"per-feature"`` or ``"per-class"``."""

    def __init__(self, X_train, y_train, X_val, y_val, X_test=None, y_test=None,
                 kind="per-feature", n_classes=None):
        if kind not in ("per-feature", "per-class"):
            raise ValueError(f"kind must be 'per-feature' or 'per-class', got {kind!r}")
        self.kind = kind
        self.X_train, self.X_val = _dense(X_train), _dense(X_val)
        self.X_test = None if X_test is None else _dense(X_test)
        self.y_train, self.y_val = np.asarray(y_train), np.asarray(y_val)
        self.y_test = None if y_test is None else np.asarray(y_test)
        self.n_features = self.X_train.shape[1]
        self.m, self.n = len(self.y_train), len(self.y_val)
        if kind == "per-feature":
            for lab in (self.y_train, self.y_val):
                if not np.all(np.isin(lab, (-1, 1))):
                    raise ValueError("per-feature layout needs labels in {-1, +1}")
            self.n_classes = 1
            self.dim_x = self.dim_y = self.n_features
        else:
            self.y_train = self.y_train.astype(np.intp)
            self.y_val = self.y_val.astype(np.intp)
            if self.y_test is not None:
                self.y_test = self.y_test.astype(np.intp)
            self.n_classes = n_classes or int(max(self.y_train.max(), self.y_val.max()) + 1)
            self.dim_x = self.n_classes
            self.dim_y = self.n_classes * self.n_features

    def _theta(self, y):
        return y.reshape(self.n_classes, self.n_features)

    # ridge part and its derivatives
    def _ridge_weights(self, x):
        # per-coordinate curvature of the penalty
        if self.kind == "per-feature":
            return np.exp(x)
        return np.repeat(2.0 * np.exp(x), self.n_features)

    def _data_grad(self, X, labels, y):
        if self.kind == "per-feature":
            t = labels * (X @ y)
            return (logistic_d1(t) * labels)[:, None] * X
        r = softmax(X @ self._theta(y).T, axis=1)
        r[np.arange(len(labels)), labels] -= 1.0
        return np.einsum("kc,kf->kcf", r, X).reshape(len(labels), -1)

    def _data_value(self, X, labels, y):
        if self.kind == "per-feature":
            return logistic_loss(labels * (X @ y))
        ls = log_softmax(X @ self._theta(y).T, axis=1)
        return -ls[np.arange(len(labels)), labels]

    # -- hooks ---------------------------------------------------------------
    def _grad1_f(self, idx, x, y):
        return np.zeros((len(idx), self.dim_x))

    def _grad2_f(self, idx, x, y):
        return self._data_grad(self.X_val[idx], self.y_val[idx], y)

    def _grad2_g(self, idx, x, y):
        return self._data_grad(self.X_train[idx], self.y_train[idx], y) + self._ridge_weights(x) * y

    def _hvp22_g(self, idx, x, y, v):
        X = self.X_train[idx]
        if self.kind == "per-feature":
            t = self.y_train[idx] * (X @ y)
            data = (logistic_d2(t) * (X @ v))[:, None] * X
        else:
            s = softmax(X @ self._theta(y).T, axis=1)
            u = X @ self._theta(v).T
            hu = s * u - s * (s * u).sum(1, keepdims=True)
            data = np.einsum("kc,kf->kcf", hu, X).reshape(len(idx), -1)
        return data + self._ridge_weights(x) * v

    def _jvp12_g(self, idx, x, y, v):
        # the data term does not involve lam; only the penalty couples x and y
        if self.kind == "per-feature":
            row = np.exp(x) * y * v
        else:
            row = 2.0 * np.exp(x) * (self._theta(y) * self._theta(v)).sum(1)
        return np.broadcast_to(row, (len(idx), self.dim_x)).copy()

    def _value_f(self, idx, x, y):
        return self._data_value(self.X_val[idx], self.y_val[idx], y)

    def _value_g(self, idx, x, y):
        if self.kind == "per-feature":
            pen = 0.5 * np.sum(np.exp(x) * y**2)
        else:
            pen = np.sum(np.exp(x) * (self._theta(y) ** 2).sum(1))
        return self._data_value(self.X_train[idx], self.y_train[idx], y) + pen

    def test_metric(self, x, y):
        """Mean data loss on the test split (``None`` without one)."""
        if self.X_test is None:
            return None
        return float(np.mean(self._data_value(self.X_test, self.y_test, y)))

    def test_error(self, y):
        if self.kind == "per-feature":
            pred = np.where(self.X_test @ y >= 0, 1, -1)
        else:
            pred = np.argmax(self.X_test @ self._theta(y).T, axis=1)
        return float(np.mean(pred != self.y_test))


def make_regpath(seed, kind="per-feature", n_train=400, n_val=200, n_test=400, n_features=20,
                 n_classes=3, X=None, labels=None):
    """Synthetic (or subsampled real) regularization-path instance."""
    rng = np.random.default_rng(seed)
    total = n_train + n_val + n_test
    if X is None:
        X = rng.standard_normal((total, n_features)) / np.sqrt(n_features)
        if kind == "per-feature":
            w = rng.standard_normal(n_features) * (rng.random(n_features) < 0.5)
            labels = np.where(rng.random(total) < expit(3 * X @ w), 1, -1)
        else:
            W = rng.standard_normal((n_classes, n_features))
            logits = 3 * X @ W.T + rng.gumbel(size=(total, n_classes))
            labels = np.argmax(logits, axis=1)
    else:
        X = _dense(X)
        labels = np.asarray(labels)
        if len(labels) < total:
            raise ValueError(f"need {total} samples, dataset has {len(labels)}")
        pick = rng.permutation(len(labels))[:total]
        X, labels = X[pick], labels[pick]
    tr, va, te = slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, total)
    return RegPathLogReg(X[tr], labels[tr], X[va], labels[va], X[te], labels[te], kind=kind,
                         n_classes=None if kind == "per-feature" else n_classes)
