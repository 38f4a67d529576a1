"""Evaluation utilities: alignment, error bounds, mixing and sweeps.

Recovered parameters are only defined up to a hidden-unit permutation and,
for even-degree units, a per-unit sign that flips an input row together with
its recurrence row while leaving the unit's output unchanged.  Alignment
quotients this group out before computing errors.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import sqrtm
from scipy.optimize import linear_sum_assignment

from .sequence_models import (AssumptionError, MarkovChainSpec, RnnParams,
                              stationary_covariance)


@dataclass
class RecoveryReport:
    permutation: np.ndarray          # estimate row permutation[i] matches true row i
    signs: np.ndarray                # +-1 applied to the permuted estimate rows
    scales: np.ndarray               # per-row rescaling (ones unless scale is allowed)
    A1: np.ndarray                   # aligned estimate
    A2: np.ndarray | None
    U: np.ndarray | None
    per_row_errors: dict             # matrix name -> per-row l2 errors after alignment
    direction_errors: np.ndarray     # 1 - |cos| per input row
    max_error: float
    median_error: float
    sigma_min: dict                  # matrix name -> smallest singular value of the truth
    u_error: float | None            # max entrywise |.|-gap of recurrences, if compared


def align(
    A1_est: np.ndarray,
    A1_true: np.ndarray,
    A2_est: np.ndarray | None = None,
    A2_true: np.ndarray | None = None,
    U_est: np.ndarray | None = None,
    U_true: np.ndarray | None = None,
    allow_scale: bool = False,
) -> RecoveryReport:
    """Match estimated units to true units and quotient out the symmetry group.

    The assignment maximizes |cosine| between input rows (ties broken by the
    assignment solver's deterministic ordering).  Signs flip aligned A1 rows
    and the matching U rows; U columns and A2 rows follow the permutation
    only.  With allow_scale each A1 row is rescaled to the true row's norm.
    """
    A1_est = np.asarray(A1_est, dtype=float)
    A1_true = np.asarray(A1_true, dtype=float)
    if A1_est.shape != A1_true.shape:
        raise ValueError("row matrices must have matching shapes")
    k = A1_true.shape[0]
    ne = np.maximum(np.linalg.norm(A1_est, axis=1), 1e-300)
    nt = np.maximum(np.linalg.norm(A1_true, axis=1), 1e-300)
    cos = (A1_true @ A1_est.T) / np.outer(nt, ne)
    rows, cols = linear_sum_assignment(-np.abs(cos))
    perm = cols[np.argsort(rows)]
    signs = np.sign(cos[np.arange(k), perm])
    signs[signs == 0] = 1.0

    A1a = signs[:, None] * A1_est[perm]
    scales = np.ones(k)
    if allow_scale:
        na = np.maximum(np.linalg.norm(A1a, axis=1), 1e-300)
        scales = np.linalg.norm(A1_true, axis=1) / na
        A1a = A1a * scales[:, None]
    A2a = A2_est[perm] if A2_est is not None else None
    Ua = None
    if U_est is not None:
        Ua = signs[:, None] * U_est[np.ix_(perm, perm)]

    per_row = {"A1": np.linalg.norm(A1a - A1_true, axis=1)}
    sigma_min = {"A1": float(np.linalg.svd(A1_true, compute_uv=False)[-1])}
    if A2a is not None and A2_true is not None:
        per_row["A2"] = np.linalg.norm(A2a - A2_true, axis=1)
        sigma_min["A2"] = float(np.linalg.svd(A2_true, compute_uv=False)[-1])
    if Ua is not None and U_true is not None:
        per_row["U"] = np.linalg.norm(np.abs(Ua) - np.abs(U_true), axis=1)
        sigma_min["U"] = float(np.linalg.svd(U_true, compute_uv=False)[-1])
    all_errs = np.concatenate(list(per_row.values()))
    na = np.maximum(np.linalg.norm(A1a, axis=1), 1e-300)
    direction = 1.0 - np.abs(np.einsum("ij,ij->i", A1a, A1_true)) / (nt * na)
    u_error = None
    if Ua is not None and U_true is not None:
        u_error = float(np.max(np.abs(np.abs(Ua) - np.abs(U_true))))
    return RecoveryReport(
        permutation=perm,
        signs=signs,
        scales=scales,
        A1=A1a,
        A2=A2a,
        U=Ua,
        per_row_errors=per_row,
        direction_errors=direction,
        max_error=float(np.max(all_errs)),
        median_error=float(np.median(all_errs)),
        sigma_min=sigma_min,
        u_error=u_error,
    )


def lipschitz_bound(params: RnnParams, s2_norm: float, gamma: float, n: int) -> float:
    """Per-sequence Lipschitz constant of the averaged cross-moment statistic.

    (1/n) ||A2|| ( ||A1|| / (1 - l ||U||) * s2_norm + 3 gamma ).
    """
    a1 = np.linalg.norm(params.A1, 2)
    a2 = np.linalg.norm(params.A2, 2)
    u = np.linalg.norm(params.U, 2)
    if params.l * u >= 1.0:
        raise AssumptionError("contraction assumption violated: l * ||U|| >= 1")
    return a2 * (a1 / (1.0 - params.l * u) * s2_norm + 3.0 * gamma) / n


def concentration_bound(
    G: float,
    theta: float,
    c: float,
    n: int,
    d1: int,
    d2: int,
    delta: float,
) -> float:
    """High-probability deviation bound for the averaged moment estimator.

    G (1 + 1/(sqrt(8) c n^{3/2})) / (1 - theta) * sqrt(8 c^2 n log((d1 + d2)/delta)).
    """
    if not 0 <= theta < 1:
        raise AssumptionError("geometric mixing requires 0 <= theta < 1")
    if c <= 0 or not 0 < delta < 1:
        raise ValueError("c must be positive and delta in (0, 1)")
    lead = G * (1.0 + 1.0 / (math.sqrt(8.0) * c * n ** 1.5)) / (1.0 - theta)
    return lead * math.sqrt(8.0 * c * c * n * math.log((d1 + d2) / delta))


def _bures_sq(S1: np.ndarray, S2: np.ndarray) -> float:
    root = sqrtm(S2)
    inner = sqrtm(root @ S1 @ root)
    val = np.trace(S1) + np.trace(S2) - 2.0 * np.real(np.trace(inner))
    return float(max(val, 0.0))


@dataclass
class MixingEstimate:
    G_hat: float
    theta_hat: float
    curve: np.ndarray        # curve[t-1] = distance-to-stationarity proxy at lag t
    fit_ok: bool = True


def mixing_estimate(
    spec: MarkovChainSpec,
    horizon: int = 30,
    mc_draws: int = 0,
    seed: int = 0,
) -> MixingEstimate:
    """Geometric decay fit rho(t) ~ G theta^(t-1) for the input chain.

    The distance proxy at lag t combines the worst-case mean displacement
    ||W^t|| over unit starting points with the Bures gap between the lag-t
    covariance (started from a point) and the stationary covariance; both are
    available in closed form for the linear-Gaussian chain, so mc_draws and
    seed are accepted for interface stability but unused.
    """
    del mc_draws, seed
    Sinf = stationary_covariance(spec)
    curve = []
    Wt = np.eye(spec.d_x)
    St = np.zeros_like(Sinf)
    for _ in range(horizon):
        Wt = spec.W @ Wt
        St = spec.W @ St @ spec.W.T + spec.sigma**2 * np.eye(spec.d_x)
        curve.append(math.sqrt(np.linalg.norm(Wt, 2) ** 2 + _bures_sq(St, Sinf)))
    curve = np.array(curve)
    ts = np.arange(1, horizon + 1)
    mask = curve > 1e-13
    if mask.sum() < 2:
        return MixingEstimate(G_hat=float(curve[0]), theta_hat=0.0, curve=curve)
    try:
        slope, intercept = np.polyfit(ts[mask] - 1, np.log(curve[mask]), 1)
    except np.linalg.LinAlgError:
        return MixingEstimate(G_hat=float("nan"), theta_hat=float("nan"),
                              curve=curve, fit_ok=False)
    return MixingEstimate(G_hat=float(np.exp(intercept)),
                          theta_hat=float(np.exp(slope)), curve=curve)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)  # (n, seed, matrix, row, error)
    slope: float = float("nan")
    intercept: float = float("nan")

    def csv_lines(self) -> list[str]:
        out = ["n,seed,matrix,row,error"]
        out += [f"{n},{seed},{matrix},{row},{err:.12g}"
                for n, seed, matrix, row, err in self.rows]
        return out


def sample_sweep(
    run_cell: Callable[[int, int], Iterable[tuple[str, int, float]]],
    ns: Sequence[int],
    seeds: Sequence[int],
    workers: int = 1,
) -> SweepResult:
    """Run recovery cells over an (n, seed) grid and fit the error decay slope.

    run_cell(n, seed) returns (matrix, row, error) triples; a failing cell may
    return an empty iterable.  Cells may run in parallel, and results merge in
    grid order so the output is identical for any worker count.  The slope is
    the log-log fit of the median error against n.
    """
    cells = [(n, seed) for n in ns for seed in seeds]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda c: list(run_cell(*c)), cells))
    else:
        outputs = [list(run_cell(n, seed)) for n, seed in cells]
    by_cell = dict(zip(cells, outputs))
    rows = []
    medians = []
    kept_ns = []
    for n in ns:
        errs = []
        for seed in seeds:
            for matrix, row, err in by_cell[(n, seed)]:
                rows.append((n, seed, matrix, row, float(err)))
                errs.append(float(err))
        if errs:
            medians.append(np.median(errs))
            kept_ns.append(n)
    if len(kept_ns) < 2:
        return SweepResult(rows=rows)
    slope, intercept = np.polyfit(np.log(np.asarray(kept_ns, dtype=float)),
                                  np.log(np.maximum(medians, 1e-300)), 1)
    return SweepResult(rows=rows, slope=float(slope), intercept=float(intercept))
