"""Ground-truth data generation.

Linear-Gaussian first-order Markov input chains, and forward simulation of
input-output RNNs (``h_t = (A1 x_t + U h_{t-1})^l`` elementwise, ``y_t = A2^T h_t``),
bidirectional RNNs, and the scalar-output variant.  Everything is a pure
function of (parameters, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats


class AssumptionError(RuntimeError):
    """A model assumption (norm bound, rank, convergence) is violated."""


@dataclass(frozen=True)
class MarkovChainSpec:
    """Linear-Gaussian chain x_t = W x_{t-1} + eps_t, eps_t ~ N(0, sigma^2 I)."""

    W: np.ndarray
    sigma: float
    init: str = "stationary"  # or "zero"

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        object.__setattr__(self, "W", W)
        if W.shape[0] != W.shape[1]:
            raise ValueError("transition matrix must be square")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if np.linalg.norm(W, 2) >= 1.0:
            raise AssumptionError("spectral norm of W must be < 1 for ergodicity")

    @property
    def d_x(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class RnnParams:
    A1: np.ndarray  # d_h x d_x
    U: np.ndarray   # d_h x d_h
    A2: np.ndarray  # d_h x d_y
    l: int = 2

    def __post_init__(self):
        for name in ("A1", "U", "A2"):
            arr = np.ascontiguousarray(np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
            object.__setattr__(self, name, arr)
        if self.l < 1:
            raise ValueError("activation order l must be >= 1")
        d_h = self.A1.shape[0]
        if self.U.shape != (d_h, d_h) or self.A2.shape[0] != d_h:
            raise ValueError("shape mismatch between A1, U, A2")

    @property
    def d_x(self) -> int:
        return self.A1.shape[1]

    @property
    def d_h(self) -> int:
        return self.A1.shape[0]

    @property
    def d_y(self) -> int:
        return self.A2.shape[1]

    def norm_slack(self) -> float:
        """1 - (||A1|| + ||U||); nonnegative under the boundedness assumption."""
        return 1.0 - (np.linalg.norm(self.A1, 2) + np.linalg.norm(self.U, 2))


@dataclass(frozen=True)
class BrnnParams:
    A1: np.ndarray  # d_h x d_x, forward
    B1: np.ndarray  # d_h x d_x, backward
    U: np.ndarray   # d_h x d_h
    V: np.ndarray   # d_h x d_h
    A2: np.ndarray  # 2 d_h x d_y
    l: int = 2

    def __post_init__(self):
        for name in ("A1", "B1", "U", "V", "A2"):
            arr = np.ascontiguousarray(np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
            object.__setattr__(self, name, arr)
        d_h = self.A1.shape[0]
        if self.B1.shape != self.A1.shape:
            raise ValueError("A1 and B1 must have the same shape")
        if self.U.shape != (d_h, d_h) or self.V.shape != (d_h, d_h):
            raise ValueError("U and V must be d_h x d_h")
        if self.A2.shape[0] != 2 * d_h:
            raise ValueError("A2 must have 2*d_h rows")

    @property
    def d_x(self) -> int:
        return self.A1.shape[1]

    @property
    def d_h(self) -> int:
        return self.A1.shape[0]

    @property
    def d_y(self) -> int:
        return self.A2.shape[1]


@dataclass
class SequenceData:
    x: np.ndarray            # d_x x n
    y: np.ndarray            # d_y x n
    h: Optional[np.ndarray] = None  # hidden trajectory, for oracles only
    z: Optional[np.ndarray] = None  # backward trajectory (BRNN)

    def __post_init__(self):
        if self.x.shape[1] != self.y.shape[1]:
            raise ValueError("x and y must have the same number of columns")
        if self.n < 3:
            raise ValueError("need n >= 3 (score functions require both neighbors)")

    @property
    def n(self) -> int:
        return self.x.shape[1]


def stationary_covariance(spec: MarkovChainSpec, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Solve Sigma = W Sigma W^T + sigma^2 I by fixed-point iteration."""
    W = spec.W
    S = spec.sigma**2 * np.eye(spec.d_x)
    base = spec.sigma**2 * np.eye(spec.d_x)
    for _ in range(max_iter):
        S_next = W @ S @ W.T + base
        if np.max(np.abs(S_next - S)) < tol:
            return S_next
        S = S_next
    raise AssumptionError("stationary covariance iteration did not converge; ||W|| too close to 1")


def sample_markov_chain(spec: MarkovChainSpec, n: int, seed: int) -> np.ndarray:
    """Simulate the chain; deterministic given (spec, n, seed).  Returns d_x x n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    d = spec.d_x
    x = np.empty((d, n))
    if spec.init == "stationary":
        Sigma = stationary_covariance(spec)
        x[:, 0] = rng.multivariate_normal(np.zeros(d), Sigma, method="cholesky")
    elif spec.init == "zero":
        x[:, 0] = 0.0
    else:
        raise ValueError(f"unknown init {spec.init!r}")
    eps = rng.standard_normal((d, n - 1)) * spec.sigma
    for t in range(1, n):
        x[:, t] = spec.W @ x[:, t - 1] + eps[:, t - 1]
    return x


def bounded_input_spec(d_x: int, w_scale: float, seed: int = 0, tail_prob: float = 1e-3) -> MarkovChainSpec:
    """Chain with W = w_scale * rotation and sigma chosen so P(||x_t|| > 1) < tail_prob.

    The stationary covariance is isotropic, c*I with c = 1/chi2_quantile, so the
    input boundedness assumption holds with high probability without truncation.
    """
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((d_x, d_x)))[0]
    c = 1.0 / stats.chi2.ppf(1.0 - tail_prob, df=d_x)
    sigma = np.sqrt(c * (1.0 - w_scale**2))
    return MarkovChainSpec(W=w_scale * Q, sigma=sigma)


def _activation(pre: np.ndarray, l: int) -> np.ndarray:
    return pre if l == 1 else pre**l


def rnn_forward(
    params: RnnParams,
    x: np.ndarray,
    h0: Optional[np.ndarray] = None,
    noise_std: float = 0.0,
    seed: int = 0,
) -> SequenceData:
    """Run the forward recursion; keeps the hidden trajectory for oracles.

    Raises on non-finite states, which signals violated norm assumptions.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    if x.shape[0] != params.d_x:
        raise ValueError(f"input dim {x.shape[0]} != d_x {params.d_x}")
    h = np.empty((params.d_h, n))
    h_prev = np.zeros(params.d_h) if h0 is None else np.asarray(h0, dtype=float)
    for t in range(n):
        pre = params.A1 @ x[:, t] + params.U @ h_prev
        h[:, t] = _activation(pre, params.l)
        h_prev = h[:, t]
        if not np.all(np.isfinite(h_prev)):
            raise AssumptionError(f"state blow-up at step {t}")
    y = params.A2.T @ h
    if noise_std > 0:
        y = y + np.random.default_rng(seed).standard_normal(y.shape) * noise_std
    return SequenceData(x=x, y=y, h=h)


def brnn_forward(params: BrnnParams, x: np.ndarray) -> SequenceData:
    """Forward pass for h, backward pass for z, y_t = A2^T [h_t; z_t].

    Boundary states are h_0 = 0 and z_{n+1} = 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[1]
    if x.shape[0] != params.d_x:
        raise ValueError(f"input dim {x.shape[0]} != d_x {params.d_x}")
    h = np.empty((params.d_h, n))
    z = np.empty((params.d_h, n))
    h_prev = np.zeros(params.d_h)
    for t in range(n):
        h[:, t] = _activation(params.A1 @ x[:, t] + params.U @ h_prev, params.l)
        h_prev = h[:, t]
    z_next = np.zeros(params.d_h)
    for t in range(n - 1, -1, -1):
        z[:, t] = _activation(params.B1 @ x[:, t] + params.V @ z_next, params.l)
        z_next = z[:, t]
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(z))):
        raise AssumptionError("state blow-up")
    y = params.A2.T @ np.vstack([h, z])
    return SequenceData(x=x, y=y, h=h, z=z)


def scalar_output_forward(params: RnnParams, x: np.ndarray, h0: Optional[np.ndarray] = None) -> SequenceData:
    """Scalar-output variant; identifiable only for activation order l >= 3."""
    if params.l < 3:
        raise ValueError("scalar output requires l >= 3")
    if params.d_y != 1:
        raise ValueError("scalar output requires d_y = 1")
    return rnn_forward(params, x, h0=h0)
