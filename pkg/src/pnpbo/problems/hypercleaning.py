"""Data hyper-cleaning: learn per-sample weights that mute corrupted labels.

Upper variable ``lam`` (one logit per training sample), lower variable
``theta`` (a ``classes x features`` linear classifier, flattened)::

    F_i(lam, theta) = CE(theta d_i^val, y_i^val)                  i < n_val
    G_j(lam, theta) = sigmoid(lam_j) CE(theta d_j, y_j) + C_r ||theta||^2

The upper objective does not depend on ``lam`` directly, so its first
partial gradient is identically zero.
"""

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .._validation import check_scalar
from ..model import BilevelProblem
from ..theory import SmoothnessParams
from .datasets import corrupt_labels, synthetic_digits

DEFAULT_C_R = 0.2


class HyperCleaning(BilevelProblem):
    """Hyper-cleaning instance on given train/validation/test arrays.

    ``corrupted`` flags the training rows whose label was replaced.
    """

    def __init__(self, X_train, y_train, X_val, y_val, X_test, y_test, corrupted=None,
                 C_r=DEFAULT_C_R, n_classes=10):
        self.C_r = check_scalar(C_r, "C_r", lo=0.0, lo_open=True)
        self.X_train = np.asarray(X_train, dtype=float)
        self.X_val = np.asarray(X_val, dtype=float)
        self.X_test = np.asarray(X_test, dtype=float)
        self.y_train = np.asarray(y_train, dtype=np.intp)
        self.y_val = np.asarray(y_val, dtype=np.intp)
        self.y_test = np.asarray(y_test, dtype=np.intp)
        self.corrupted = (
            np.zeros(len(self.y_train), bool) if corrupted is None else np.asarray(corrupted, bool)
        )
        self.n_classes = n_classes
        self.n_features = self.X_train.shape[1]
        self.n = len(self.y_val)
        self.m = len(self.y_train)
        self.dim_x = self.m
        self.dim_y = n_classes * self.n_features
        # CE Hessian in the logits is bounded by 1/2, so a sample's gradient is
        # (||d||^2/2 + 2 C_r)-Lipschitz in theta; sigmoid' <= 1/4 bounds the rest
        sq = max((self.X_train**2).sum(1).max(), (self.X_val**2).sum(1).max())
        self.declared = SmoothnessParams(
            Lf=0.5 * sq, Lg1=0.5 * sq + 2 * self.C_r, Lg2=0.5 * sq, mu=2 * self.C_r, Cf=np.sqrt(2 * sq)
        )
        self.smoothness = self.declared

    def _theta(self, y):
        return y.reshape(self.n_classes, self.n_features)

    def _residual(self, X, labels, theta):
        # softmax(theta d) - onehot(label), one row per sample
        r = softmax(X @ theta.T, axis=1)
        r[np.arange(len(labels)), labels] -= 1.0
        return r

    # -- hooks -------------------------------------------------------------------
    def _grad1_f(self, idx, x, y):
        return np.zeros((len(idx), self.dim_x))

    def _grad2_f(self, idx, x, y):
        X = self.X_val[idx]
        r = self._residual(X, self.y_val[idx], self._theta(y))
        return np.einsum("kc,kf->kcf", r, X).reshape(len(idx), -1)

    def _grad2_g(self, idx, x, y):
        X = self.X_train[idx]
        theta = self._theta(y)
        r = self._residual(X, self.y_train[idx], theta) * expit(x[idx])[:, None]
        return np.einsum("kc,kf->kcf", r, X).reshape(len(idx), -1) + 2 * self.C_r * y

    def _hvp22_g(self, idx, x, y, v):
        X = self.X_train[idx]
        s = softmax(X @ self._theta(y).T, axis=1)
        u = X @ self._theta(v).T
        hu = (s * u - s * (s * u).sum(1, keepdims=True)) * expit(x[idx])[:, None]
        return np.einsum("kc,kf->kcf", hu, X).reshape(len(idx), -1) + 2 * self.C_r * v

    def _jvp12_g(self, idx, x, y, v):
        X = self.X_train[idx]
        r = self._residual(X, self.y_train[idx], self._theta(y))
        # <grad_theta CE_j, v> = sum_c r_c (V d_j)_c
        inner = (r * (X @ self._theta(v).T)).sum(1)
        s = expit(x[idx])
        out = np.zeros((len(idx), self.dim_x))
        out[np.arange(len(idx)), idx] = s * (1 - s) * inner
        return out

    # batched means as one matrix product instead of per-sample rows
    def _mean_grad1_f(self, idx, x, y):
        return np.zeros(self.dim_x)

    def _mean_grad2_f(self, idx, x, y):
        X = self.X_val[idx]
        r = self._residual(X, self.y_val[idx], self._theta(y))
        return (r.T @ X).ravel() / len(idx)

    def _mean_grad2_g(self, idx, x, y):
        X = self.X_train[idx]
        r = self._residual(X, self.y_train[idx], self._theta(y)) * expit(x[idx])[:, None]
        return (r.T @ X).ravel() / len(idx) + 2 * self.C_r * y

    def _mean_hvp22_g(self, idx, x, y, v):
        X = self.X_train[idx]
        s = softmax(X @ self._theta(y).T, axis=1)
        u = X @ self._theta(v).T
        hu = (s * u - s * (s * u).sum(1, keepdims=True)) * expit(x[idx])[:, None]
        return (hu.T @ X).ravel() / len(idx) + 2 * self.C_r * v

    def _mean_jvp12_g(self, idx, x, y, v):
        X = self.X_train[idx]
        r = self._residual(X, self.y_train[idx], self._theta(y))
        inner = (r * (X @ self._theta(v).T)).sum(1)
        s = expit(x[idx])
        out = np.zeros(self.dim_x)
        out[idx] = s * (1 - s) * inner / len(idx)
        return out

    def _value_f(self, idx, x, y):
        ls = log_softmax(self.X_val[idx] @ self._theta(y).T, axis=1)
        return -ls[np.arange(len(idx)), self.y_val[idx]]

    def _value_g(self, idx, x, y):
        ls = log_softmax(self.X_train[idx] @ self._theta(y).T, axis=1)
        ce = -ls[np.arange(len(idx)), self.y_train[idx]]
        return expit(x[idx]) * ce + self.C_r * (y @ y)

    # -- diagnostics ---------------------------------------------------------------
    def predict(self, y, X=None):
        X = self.X_test if X is None else X
        return np.argmax(X @ self._theta(y).T, axis=1)

    def test_error(self, y):
        return float(np.mean(self.predict(y) != self.y_test))

    def test_metric(self, x, y):
        return self.test_error(y)

    def weight_gap(self, x):
        """Mean ``sigmoid(lam)`` on clean minus corrupted training rows."""
        w = expit(x)
        return float(w[~self.corrupted].mean() - w[self.corrupted].mean())


def make_hypercleaning(seed, n_train=1000, n_val=500, n_test=1000, p_tilde=0.5, C_r=DEFAULT_C_R,
                       images=None, labels=None):
    """Hyper-cleaning instance from arrays, or from synthetic digits when none are given.

    When ``images``/``labels`` are given, the three splits are drawn without
    replacement from them. Only the training split is corrupted.
    """
    rng = np.random.default_rng(seed)
    total = n_train + n_val + n_test
    if images is None:
        images, labels = synthetic_digits(total, seed=int(rng.integers(2**31)))
    else:
        images = np.asarray(images, dtype=float).reshape(len(images), -1)
        labels = np.asarray(labels)
        if len(images) < total:
            raise ValueError(f"need {total} samples, dataset has {len(images)}")
        pick = rng.permutation(len(images))[:total]
        images, labels = images[pick], labels[pick]
    tr, va = slice(0, n_train), slice(n_train, n_train + n_val)
    te = slice(n_train + n_val, total)
    y_train, flags = corrupt_labels(labels[tr], p_tilde, seed=int(rng.integers(2**31)))
    return HyperCleaning(images[tr], y_train, images[va], labels[va], images[te], labels[te],
                         corrupted=flags, C_r=C_r)
