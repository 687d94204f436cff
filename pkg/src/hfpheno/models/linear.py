"""L2-regularized logistic regression solved by damped Newton iterations."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .._validation import check_array, check_binary_target, check_is_fitted


def logistic(z: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid."""
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss_and_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, reg_c: float
) -> tuple[float, np.ndarray, float]:
    """Penalized negative log-likelihood with its gradient.

    The penalty is ||w||^2 / (2 C); the bias is not penalized.
    """
    z = X @ w + b
    p = logistic(z)
    eps = 1e-15
    nll = -float(np.sum(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)))
    if np.isfinite(reg_c):
        nll += 0.5 * float(w @ w) / reg_c
    residual = p - y
    grad_w = X.T @ residual
    if np.isfinite(reg_c):
        grad_w = grad_w + w / reg_c
    grad_b = float(np.sum(residual))
    return nll, grad_w, grad_b


class NewtonLogisticRegression(BaseEstimator, ClassifierMixin):
    """Binary logistic regression with an unpenalized intercept.

    Parameters
    ----------
    reg_c : inverse regularization strength C = 1/lambda; np.inf disables
        the penalty.
    tol : stop when the 2-norm of the full gradient drops below this.
    max_iter : Newton iteration budget; exceeding it raises.
    seed : accepted for interface uniformity; the solver itself is
        deterministic (cold start at zero).
    """

    def __init__(self, reg_c: float = 1.0, tol: float = 1e-8, max_iter: int = 200,
                 seed: int = 0):
        self.reg_c = reg_c
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.coef_: np.ndarray | None = None
        self.intercept_: float | None = None
        self.n_iter_: int | None = None

    def fit(self, X, y) -> "NewtonLogisticRegression":
        if self.reg_c <= 0:
            raise ValueError("reg_c must be positive")
        X = check_array(X)
        y = check_binary_target(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have mismatched lengths")
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        loss, grad_w, grad_b = log_loss_and_grad(w, b, X, y, self.reg_c)
        for iteration in range(1, self.max_iter + 1):
            grad_norm = float(np.sqrt(grad_w @ grad_w + grad_b * grad_b))
            if grad_norm <= self.tol:
                self.coef_, self.intercept_, self.n_iter_ = w, b, iteration - 1
                return self
            p = logistic(X @ w + b)
            weights = np.maximum(p * (1 - p), 1e-12)
            Xw = X * weights[:, None]
            H = np.empty((d + 1, d + 1))
            H[:d, :d] = X.T @ Xw
            if np.isfinite(self.reg_c):
                H[:d, :d] += np.eye(d) / self.reg_c
            H[:d, d] = Xw.sum(axis=0)
            H[d, :d] = H[:d, d]
            H[d, d] = float(weights.sum())
            g = np.concatenate([grad_w, [grad_b]])
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, g, rcond=None)[0]
            # Damping: halve the step until the penalized loss stops
            # increasing.  The slack tolerates float rounding near the
            # optimum, where the true decrease is below resolution.
            slack = 1e-12 * (1.0 + abs(loss))
            t = 1.0
            for _ in range(50):
                w_new = w - t * step[:d]
                b_new = b - t * step[d]
                loss_new, grad_w_new, grad_b_new = log_loss_and_grad(
                    w_new, b_new, X, y, self.reg_c
                )
                if loss_new <= loss + slack:
                    break
                t *= 0.5
            w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, grad_w_new, grad_b_new
        grad_norm = float(np.sqrt(grad_w @ grad_w + grad_b * grad_b))
        if grad_norm <= self.tol:
            self.coef_, self.intercept_, self.n_iter_ = w, b, self.max_iter
            return self
        raise RuntimeError(
            f"Newton solver did not converge in {self.max_iter} iterations; "
            f"final gradient norm {grad_norm:.3e}"
        )

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        return logistic(self.decision_function(X))

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(int)
