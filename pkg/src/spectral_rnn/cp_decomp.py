"""Low-rank CP decomposition of order-3 moment tensors.

Two tensor shapes arise.  The main pipeline produces pair-symmetric tensors
T = sum_r w_r b_r (x) c_r (x) c_r with modes 2 and 3 sharing the factor c_r;
auxiliary paths produce fully symmetric tensors sum_r w_r c_r^(x)3.

Both paths whiten against a definite random slice combination M_theta =
sum_a theta_a T[a,:,:] = C diag(eta) C^T; after whitening the shared factors
are orthonormal, so they come out of an eigendecomposition (pair-symmetric
case) or a tensor power method with restarts and deflation (symmetric case).
Mode-1 factors and weights are then fit to the original tensor by least
squares, which also undoes any mode-1 preconditioning.  When no definite
slice combination exists, a simultaneous-diagonalization fallback recovers
the shared factors from eigenvectors of M_1 pinv(M_2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence_models import AssumptionError
from .tensor_core import multilinear, pinv

DEFAULT_TRIALS = 64
DEFAULT_ITERS = 200
DEFAULT_TOL = 1e-10
RANK_TOL = 1e-10


@dataclass
class CpDecomposition:
    """Rank-k fit T ~ sum_r weights[r] * mode1[:, r] (x) factor[:, r] (x) factor[:, r].

    Columns of mode1 and factor have unit norm and components are sorted by
    decreasing |weight|.  For pair-symmetric tensors the weights are
    nonnegative and mode1 carries signs; for fully symmetric tensors mode1
    equals factor and the weights are signed.  Each factor column has its
    first significant entry made positive (the flip is invisible to the
    squared pair).
    """

    weights: np.ndarray
    mode1: np.ndarray
    factor: np.ndarray

    @property
    def rank(self) -> int:
        return self.weights.shape[0]

    @property
    def R1(self) -> np.ndarray:
        return self.mode1

    @property
    def R2(self) -> np.ndarray:
        return self.factor

    @property
    def R3(self) -> np.ndarray:
        return self.factor

    def reconstruct(self) -> np.ndarray:
        return np.einsum("r,ar,ir,jr->aij", self.weights, self.mode1,
                         self.factor, self.factor)

    def residual(self, T: np.ndarray) -> float:
        nT = np.linalg.norm(T)
        if nT == 0:
            return 0.0
        return float(np.linalg.norm(T - self.reconstruct()) / nT)


def symmetrizer_from_moment(M1: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Mode-1 preconditioner built from a first-order cross-moment matrix.

    Contracting mode 1 with this matrix maps mode-1 factors of the form
    M1 c_r onto (scaled projections of) the shared factors.
    """
    return pinv(np.asarray(M1, dtype=float), tol=tol).T


def symmetrize(T: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Precondition mode 1: multilinear(T, D, I, I)."""
    T = np.asarray(T, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.shape[0] != T.shape[0]:
        raise ValueError("preconditioner row count must match mode-1 dimension")
    return multilinear(T, D, None, None)


def _slice_matrix(T: np.ndarray, theta: np.ndarray) -> np.ndarray:
    M = np.tensordot(theta, T, axes=(0, 0))
    return 0.5 * (M + M.T)


def _find_definite_combo(
    T: np.ndarray, k: int, rng: np.random.Generator, n_trials: int
) -> tuple[np.ndarray, np.ndarray] | None:
    """Search for theta making the top-k spectrum of M_theta one-signed.

    Returns (eigenvalues, eigenvectors) restricted to the best top-k block,
    or None if every trial produced an indefinite or deficient combination.
    """
    d1 = T.shape[0]
    thetas = [np.ones(d1) / np.sqrt(d1)]
    thetas += [rng.standard_normal(d1) for _ in range(n_trials)]
    best = None
    best_score = 0.0
    for theta in thetas:
        M = _slice_matrix(T, theta)
        vals, vecs = np.linalg.eigh(M)
        order = np.argsort(-np.abs(vals))[:k]
        top = vals[order]
        if np.abs(top[-1]) <= DEFAULT_TOL * max(np.abs(top[0]), 1.0):
            continue
        if not (np.all(top > 0) or np.all(top < 0)):
            continue
        score = np.abs(top[-1]) / np.abs(top[0])
        if score > best_score:
            best_score = score
            best = (top, vecs[:, order])
    return best


def whiten(T: np.ndarray, k: int, seed: int = 0,
           n_trials: int = DEFAULT_TRIALS) -> tuple[np.ndarray, np.ndarray]:
    """Whitening stage: returns (core, W) with core = multilinear(T, W, W, W).

    W is built from the rank-k eigendecomposition of a definite slice
    combination, so the core's shared factors are orthonormal.  Intended for
    (approximately) fully symmetric T; the trailing two modes are what the
    later stages rely on.
    """
    T = np.asarray(T, dtype=float)
    rng = np.random.default_rng(seed)
    combo = _find_definite_combo(T, k, rng, n_trials)
    if combo is None:
        raise AssumptionError("rank deficiency; check full-rank assumption")
    vals, vecs = combo
    W = vecs * np.abs(vals) ** -0.5
    return multilinear(T, W, W, W), W


def _power_iteration(core, rng, n_restarts, n_iters, tol):
    """Best eigenpair of a symmetric order-3 tensor over several starts."""
    d = core.shape[0]
    flat = core.reshape(d, d * d)
    starts = [np.linalg.svd(flat)[0][:, 0]]
    starts += [rng.standard_normal(d) for _ in range(n_restarts)]
    best_lam, best_u, converged = 0.0, starts[0], False
    for u in starts:
        u = u / np.linalg.norm(u)
        ok = False
        for _ in range(n_iters):
            v = np.einsum("ijk,j,k->i", core, u, u)
            nv = np.linalg.norm(v)
            if nv < tol:
                break
            v /= nv
            if min(np.linalg.norm(v - u), np.linalg.norm(v + u)) < tol:
                u = v
                ok = True
                break
            u = v
        lam = float(np.einsum("ijk,i,j,k->", core, u, u, u))
        if abs(lam) > abs(best_lam):
            best_lam, best_u, converged = lam, u, ok
    return best_lam, best_u, converged


def power_method(
    core: np.ndarray,
    k: int | None = None,
    n_restarts: int | None = None,
    n_iters: int = DEFAULT_ITERS,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> CpDecomposition:
    """Deflated tensor power method on a symmetric core.

    Extracts k eigenpairs by iterating u <- core(I, u, u)/||.|| from an
    SVD-based start plus random restarts, deflating core by lambda u^(x)3
    after each.  Weights keep the eigenvalue sign; components are sorted by
    |weight| with ties broken by making the first significant entry of each
    vector positive.
    """
    core = np.asarray(core, dtype=float)
    d = core.shape[0]
    if k is None:
        k = d
    if n_restarts is None:
        n_restarts = 10 * k
    rng = np.random.default_rng(seed)
    work = core.copy()
    lams, us = [], []
    for _ in range(k):
        lam, u, _ = _power_iteration(work, rng, n_restarts, n_iters, tol)
        lams.append(lam)
        us.append(u)
        work = work - lam * np.einsum("i,j,k->ijk", u, u, u)
    weights = np.array(lams)
    factor = np.stack(us, axis=1)
    weights, mode1, factor = _finalize(weights, factor, factor, symmetric=True)
    return CpDecomposition(weights=weights, mode1=mode1, factor=factor)


def _finalize(weights, mode1, factor, symmetric, rank_tol=RANK_TOL, sig_tol=1e-8):
    """Sign convention, rank detection, and sorting shared by all paths."""
    w_mag = np.abs(weights)
    if w_mag.size == 0 or np.max(w_mag) == 0.0:
        d1, d = mode1.shape[0], factor.shape[0]
        return np.zeros(0), np.zeros((d1, 0)), np.zeros((d, 0))
    keep = w_mag >= rank_tol * np.max(w_mag)
    weights, mode1, factor = weights[keep], mode1[:, keep], factor[:, keep]
    for r in range(weights.shape[0]):
        col = factor[:, r]
        sig = np.nonzero(np.abs(col) > sig_tol * np.max(np.abs(col)))[0]
        if sig.size and col[sig[0]] < 0:
            factor[:, r] = -col
            if symmetric:
                weights[r] = -weights[r]
    if symmetric:
        mode1 = factor
    order = np.argsort(-np.abs(weights), kind="stable")
    return weights[order], mode1[:, order], factor[:, order]


def _fit_mode1(T: np.ndarray, factor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares mode-1 coefficients of T against the c_r c_r^T basis."""
    d1 = T.shape[0]
    k = factor.shape[1]
    G = np.stack([np.outer(factor[:, r], factor[:, r]).ravel()
                  for r in range(k)], axis=1)
    B, _, grank, _ = np.linalg.lstsq(G, T.reshape(d1, -1).T, rcond=None)
    if grank < k:
        raise AssumptionError("rank deficiency; check full-rank assumption")
    B = B.T  # d1 x k
    weights = np.linalg.norm(B, axis=0)
    mode1 = np.divide(B, weights, out=np.zeros_like(B), where=weights > 0)
    return weights, mode1


def _jennrich_factors(T: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Shared factors via eigenvectors of M_theta1 pinv(M_theta2)."""
    d1 = T.shape[0]
    M1 = _slice_matrix(T, rng.standard_normal(d1))
    M2 = _slice_matrix(T, rng.standard_normal(d1))
    vals, vecs = np.linalg.eig(M1 @ pinv(M2))
    order = np.argsort(-np.abs(vals))[:k]
    C = np.real(vecs[:, order])
    norms = np.linalg.norm(C, axis=0)
    if np.any(norms < DEFAULT_TOL):
        raise AssumptionError("rank deficiency; check full-rank assumption")
    return C / norms


def decompose(
    T: np.ndarray,
    k: int,
    M1: np.ndarray | None = None,
    seed: int = 0,
    n_trials: int = DEFAULT_TRIALS,
) -> CpDecomposition:
    """Rank-k pair-symmetric CP decomposition of an order-3 tensor.

    M1, if given and well-conditioned, preconditions mode 1 before the
    whitening search; an ill-conditioned M1 (condition number above 1e6)
    is skipped in favor of random slice combinations.  The final mode-1 fit
    is always against the original T, so preconditioning only helps the
    search and never biases the result.  Components with weight below
    1e-10 of the largest are dropped (a zero tensor yields rank 0).
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 3 or T.shape[1] != T.shape[2]:
        raise ValueError("expected an order-3 tensor with equal trailing modes")
    d1, d = T.shape[0], T.shape[1]
    if not 1 <= k <= d:
        raise ValueError("rank must be between 1 and the trailing dimension")
    if np.linalg.norm(T) == 0.0:
        return CpDecomposition(weights=np.zeros(0), mode1=np.zeros((d1, 0)),
                               factor=np.zeros((d, 0)))
    rng = np.random.default_rng(seed)

    T_search = T
    if M1 is not None:
        M1 = np.asarray(M1, dtype=float)
        sv = np.linalg.svd(M1, compute_uv=False)
        r = min(k, sv.size)
        if sv.size and sv[0] > 0 and sv[r - 1] > 0 and sv[0] / sv[r - 1] < 1e6:
            T_search = symmetrize(T, symmetrizer_from_moment(M1))

    combo = _find_definite_combo(T_search, k, rng, n_trials)
    if combo is None:
        factor = _jennrich_factors(T_search, k, rng)
    else:
        vals, vecs = combo
        W = vecs * np.abs(vals) ** -0.5
        core = multilinear(T_search, None, W, W)
        # core slices share an orthonormal eigenbasis; a generic slice
        # combination exposes it in one eigendecomposition
        A = _slice_matrix(core, rng.standard_normal(core.shape[0]))
        _, Q = np.linalg.eigh(A)
        unwhiten = vecs * np.abs(vals) ** 0.5  # = W (W^T W)^{-1}
        C = unwhiten @ Q
        factor = C / np.linalg.norm(C, axis=0)

    weights, mode1 = _fit_mode1(T, factor)
    weights, mode1, factor = _finalize(weights, mode1, factor, symmetric=False)
    return CpDecomposition(weights=weights, mode1=mode1, factor=factor)


def decompose_symmetric(
    T: np.ndarray,
    k: int,
    seed: int = 0,
    n_trials: int = DEFAULT_TRIALS,
    n_restarts: int | None = None,
    n_iters: int = DEFAULT_ITERS,
    tol: float = DEFAULT_TOL,
) -> CpDecomposition:
    """Rank-k decomposition of a fully symmetric tensor sum_r w_r c_r^(x)3.

    Whitens against a definite slice combination, extracts whitened factors
    by the deflated tensor power method, then refits signed weights to the
    original tensor.  mode1 equals factor and weights carry the signs.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 3 or len(set(T.shape)) != 1:
        raise ValueError("expected a cubical order-3 tensor")
    d = T.shape[0]
    if np.linalg.norm(T) == 0.0:
        return CpDecomposition(weights=np.zeros(0), mode1=np.zeros((d, 0)),
                               factor=np.zeros((d, 0)))
    rng = np.random.default_rng(seed)
    core, W = whiten(T, k, seed=seed, n_trials=n_trials)
    if n_restarts is None:
        n_restarts = 10 * k
    work = core.copy()
    us = []
    for _ in range(k):
        lam, u, _ = _power_iteration(work, rng, n_restarts, n_iters, tol)
        us.append(u)
        work = work - lam * np.einsum("i,j,k->ijk", u, u, u)
    unwhiten = W @ np.linalg.inv(W.T @ W)
    C = unwhiten @ np.stack(us, axis=1)
    factor = C / np.linalg.norm(C, axis=0)

    G = np.stack([np.einsum("i,j,k->ijk", factor[:, r], factor[:, r],
                            factor[:, r]).ravel() for r in range(k)], axis=1)
    w = np.linalg.lstsq(G, T.ravel(), rcond=None)[0]
    weights, mode1, factor = _finalize(w, factor, factor, symmetric=True)
    return CpDecomposition(weights=weights, mode1=mode1, factor=factor)
