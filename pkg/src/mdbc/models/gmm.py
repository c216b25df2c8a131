"""Full-covariance Gaussian mixture with an unconstrained parameterization.

The parameter vector packs, in order:

* ``K`` mixture-weight logits (weights are ``softmax`` of these),
* ``K * p`` component means,
* per component, ``p`` log-diagonal entries of the covariance Cholesky
  factor followed by the ``p (p - 1) / 2`` strict lower-triangle entries
  in row-major order.

Every finite parameter vector therefore encodes a valid mixture: weights
sum to one and covariances ``L L^T`` are symmetric positive definite.

Two families of evaluation routines coexist on purpose.  The ``*_point``
routines use strictly sequential scalar reductions and ``math.exp`` /
``math.log`` so that the compiled resampling kernel can reproduce them
bit-for-bit; the batch routines are numpy-vectorized over observations
and are used for fitting, grid evaluation, and per-resample clustering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, InputError

LOG_2PI = math.log(2.0 * math.pi)


def _exp(v: float) -> float:
    # total version of math.exp: IEEE overflow semantics, like C exp()
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class GmmSpec:
    """Shape descriptor for a full-covariance Gaussian mixture."""

    n_components: int
    dim: int

    def __post_init__(self):
        if self.n_components < 1 or self.dim < 1:
            raise InputError("n_components and dim must be positive")

    @property
    def n_params(self) -> int:
        k, p = self.n_components, self.dim
        return k + k * p + k * (p + p * (p - 1) // 2)

    @property
    def n_tril(self) -> int:
        p = self.dim
        return p * (p - 1) // 2


def _check_theta(spec: GmmSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.n_params,):
        raise ContractViolation(
            f"theta has shape {theta.shape}, expected ({spec.n_params},)"
        )
    if not np.all(np.isfinite(theta)):
        raise InputError("theta contains non-finite entries")
    return theta


def unpack(spec: GmmSpec, theta: np.ndarray):
    """Split a flat parameter vector into (logits, means, log_diags, low_tris).

    ``means`` has shape (K, p), ``log_diags`` (K, p) and ``low_tris``
    (K, p(p-1)/2) with strict-lower entries in row-major order.
    """
    theta = _check_theta(spec, theta)
    k, p = spec.n_components, spec.dim
    logits = theta[:k]
    means = theta[k : k + k * p].reshape(k, p)
    chol = theta[k + k * p :].reshape(k, p + spec.n_tril)
    log_diags = chol[:, :p]
    low_tris = chol[:, p:]
    return logits, means, log_diags, low_tris


def pack(spec: GmmSpec, logits, means, log_diags, low_tris) -> np.ndarray:
    k, p = spec.n_components, spec.dim
    chol = np.concatenate(
        [np.asarray(log_diags).reshape(k, p), np.asarray(low_tris).reshape(k, spec.n_tril)],
        axis=1,
    )
    return np.concatenate(
        [np.asarray(logits).ravel(), np.asarray(means).ravel(), chol.ravel()]
    ).astype(np.float64)


def cholesky_factors(spec: GmmSpec, theta: np.ndarray) -> np.ndarray:
    """Dense (K, p, p) lower-triangular factors reconstructed from theta."""
    _, _, log_diags, low_tris = unpack(spec, theta)
    k, p = spec.n_components, spec.dim
    out = np.zeros((k, p, p))
    rows, cols = np.tril_indices(p, -1)
    for j in range(k):
        out[j, np.arange(p), np.arange(p)] = np.exp(log_diags[j])
        out[j, rows, cols] = low_tris[j]
    return out


def covariances(spec: GmmSpec, theta: np.ndarray) -> np.ndarray:
    ls = cholesky_factors(spec, theta)
    return np.einsum("kij,klj->kil", ls, ls)


def weights(spec: GmmSpec, theta: np.ndarray) -> np.ndarray:
    logits = unpack(spec, theta)[0]
    w = np.exp(logits - np.max(logits))
    return w / w.sum()


# ---------------------------------------------------------------------------
# Pointwise reference routines (sequential arithmetic, kernel-compatible)
# ---------------------------------------------------------------------------


def _check_x(spec: GmmSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise ContractViolation(f"x has shape {x.shape}, expected ({spec.dim},)")
    if not np.all(np.isfinite(x)):
        raise InputError("x contains non-finite entries")
    return x


def _logsumexp_seq(values):
    m = values[0]
    for v in values[1:]:
        if v > m:
            m = v
    acc = 0.0
    for v in values:
        acc += math.exp(v - m)
    return m + math.log(acc)


def _component_logpdfs(spec, theta, x):
    """Per-component log w_k-unnormalized joint terms a_k = logit_k + log N_k(x).

    Returns (a, us, log_diag_rows) where us[k] is the forward-substitution
    solve L_k^{-1} (x - mu_k), reused by the score.
    """
    logits, means, log_diags, low_tris = unpack(spec, theta)
    k, p = spec.n_components, spec.dim
    a = np.empty(k)
    us = np.empty((k, p))
    for j in range(k):
        # forward solve L u = x - mu, sequential over coordinates
        q = 0.0
        sum_logdiag = 0.0
        for i in range(p):
            acc = x[i] - means[j, i]
            for m in range(i):
                acc -= _ltri_entry(low_tris, j, i, m, p) * us[j, m]
            diag = _exp(log_diags[j, i])
            us[j, i] = acc / diag
            q += us[j, i] * us[j, i]
            sum_logdiag += log_diags[j, i]
        a[j] = logits[j] - 0.5 * p * LOG_2PI - sum_logdiag - 0.5 * q
    return a, us, log_diags


def _ltri_entry(low_tris, j, i, m, p):
    # strict lower-triangle entries stored row-major: (1,0),(2,0),(2,1),...
    return low_tris[j, i * (i - 1) // 2 + m]


def log_density_point(spec: GmmSpec, theta, x) -> float:
    """log f_theta(x) evaluated with sequential scalar arithmetic."""
    theta = _check_theta(spec, theta)
    x = _check_x(spec, x)
    logits = unpack(spec, theta)[0]
    a, _, _ = _component_logpdfs(spec, theta, x)
    return _logsumexp_seq(a) - _logsumexp_seq(logits)


def score_point(spec: GmmSpec, theta, x) -> np.ndarray:
    """Exact gradient of ``log_density_point`` with respect to theta."""
    theta = _check_theta(spec, theta)
    x = _check_x(spec, x)
    logits, means, log_diags, low_tris = unpack(spec, theta)
    k, p = spec.n_components, spec.dim
    a, us, _ = _component_logpdfs(spec, theta, x)

    lse_a = _logsumexp_seq(a)
    lse_w = _logsumexp_seq(logits)

    grad = np.zeros(spec.n_params)
    off_mu = k
    off_chol = k + k * p
    blk = p + spec.n_tril
    for j in range(k):
        r = math.exp(a[j] - lse_a)
        s = math.exp(logits[j] - lse_w)
        grad[j] = r - s
        # back solve v = L^{-T} u, sequential descending
        v = np.empty(p)
        for i in range(p - 1, -1, -1):
            acc = us[j, i]
            for m in range(i + 1, p):
                acc -= _ltri_entry(low_tris, j, m, i, p) * v[m]
            v[i] = acc / _exp(log_diags[j, i])
        for i in range(p):
            grad[off_mu + j * p + i] = r * v[i]
        base = off_chol + j * blk
        for i in range(p):
            # d logN / d rho_i with L_ii = exp(rho_i)
            grad[base + i] = r * (v[i] * us[j, i] * _exp(log_diags[j, i]) - 1.0)
        for i in range(p):
            for m in range(i):
                grad[base + p + i * (i - 1) // 2 + m] = r * v[i] * us[j, m]
    return grad


def sample_from_variates(spec: GmmSpec, theta, u: float, z: np.ndarray) -> np.ndarray:
    """Map one uniform and ``p`` standard normals to a draw from f_theta.

    The component is chosen by scanning the unnormalized softmax cumulative
    sum against ``u * total``; the point is ``mu_c + L_c z``.  Sequential
    arithmetic keeps this bit-compatible with the compiled kernel.
    """
    logits, means, log_diags, low_tris = unpack(spec, theta)
    k, p = spec.n_components, spec.dim
    m = logits[0]
    for j in range(1, k):
        if logits[j] > m:
            m = logits[j]
    total = 0.0
    probs = np.empty(k)
    for j in range(k):
        probs[j] = _exp(logits[j] - m)
        total += probs[j]
    target = u * total
    acc = 0.0
    comp = k - 1
    for j in range(k):
        acc += probs[j]
        if target < acc:
            comp = j
            break
    x = np.empty(p)
    for i in range(p):
        acc = means[comp, i] + _exp(log_diags[comp, i]) * z[i]
        for mm in range(i):
            acc += _ltri_entry(low_tris, comp, i, mm, p) * z[mm]
        x[i] = acc
    return x


VARIATES_PER_DRAW = ("uniform", "normal")  # one uniform + p normals per draw


def sample(spec: GmmSpec, theta, rng: np.random.Generator) -> np.ndarray:
    """One draw from f_theta; consumes 1 uniform then ``dim`` normals."""
    theta = _check_theta(spec, theta)
    u = rng.random()
    z = rng.standard_normal(spec.dim)
    return sample_from_variates(spec, theta, u, z)


# ---------------------------------------------------------------------------
# Batch routines (vectorized over observations)
# ---------------------------------------------------------------------------


def _solve_forward_batch(diff, ls):
    """Forward substitution L u = diff vectorized over (n, K) pairs.

    diff: (n, K, p); ls: (K, p, p) lower triangular. Returns u of shape
    (n, K, p). The p-loop is explicit, so no BLAS reductions are involved.
    """
    n, k, p = diff.shape
    u = np.empty_like(diff)
    for i in range(p):
        acc = diff[:, :, i].copy()
        for m in range(i):
            acc -= ls[:, i, m][None, :] * u[:, :, m]
        u[:, :, i] = acc / ls[:, i, i][None, :]
    return u


def component_log_joint(spec: GmmSpec, theta, xs) -> np.ndarray:
    """(n, K) array of ``logit_k + log N_k(x_i)`` terms."""
    theta = _check_theta(spec, theta)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != spec.dim:
        raise ContractViolation(f"xs has shape {xs.shape}, expected (n, {spec.dim})")
    logits, means, log_diags, _ = unpack(spec, theta)
    ls = cholesky_factors(spec, theta)
    diff = xs[:, None, :] - means[None, :, :]
    u = _solve_forward_batch(diff, ls)
    q = np.einsum("nkp,nkp->nk", u, u)
    logdet = log_diags.sum(axis=1)
    return logits[None, :] - 0.5 * spec.dim * LOG_2PI - logdet[None, :] - 0.5 * q


def log_density_batch(spec: GmmSpec, theta, xs) -> np.ndarray:
    """log f_theta at each row of ``xs``; shape (n,)."""
    a = component_log_joint(spec, theta, xs)
    logits = unpack(spec, theta)[0]
    m = a.max(axis=1)
    lse = m + np.log(np.exp(a - m[:, None]).sum(axis=1))
    mw = logits.max()
    lse_w = mw + np.log(np.exp(logits - mw).sum())
    return lse - lse_w


def responsibilities(spec: GmmSpec, theta, xs) -> np.ndarray:
    a = component_log_joint(spec, theta, xs)
    m = a.max(axis=1, keepdims=True)
    r = np.exp(a - m)
    return r / r.sum(axis=1, keepdims=True)


def sample_batch(spec: GmmSpec, theta, n: int, rng: np.random.Generator):
    """n i.i.d. draws plus component labels; vectorized."""
    theta = _check_theta(spec, theta)
    w = weights(spec, theta)
    labels = rng.choice(spec.n_components, size=n, p=w)
    z = rng.standard_normal((n, spec.dim))
    ls = cholesky_factors(spec, theta)
    means = unpack(spec, theta)[1]
    xs = means[labels] + np.einsum("nij,nj->ni", ls[labels], z)
    return xs, labels


# ---------------------------------------------------------------------------
# Maximum-likelihood fitting by EM
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    theta: np.ndarray
    loglik_trace: np.ndarray = field(repr=False)
    converged: bool = True
    warning: str | None = None


def _kmeanspp_centers(xs, k, rng):
    n = xs.shape[0]
    centers = [xs[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((xs - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(xs[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(xs[rng.choice(n, p=probs)])
    return np.array(centers)


def theta_from_moments(spec: GmmSpec, weights, means, covs) -> np.ndarray:
    """Parameter vector encoding the given mixture weights/means/covariances."""
    w = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64).reshape(spec.n_components, spec.dim)
    covs = np.asarray(covs, dtype=np.float64).reshape(spec.n_components, spec.dim, spec.dim)
    if w.shape != (spec.n_components,) or np.any(w <= 0):
        raise InputError("weights must be positive, one per component")
    return _theta_from_moments(spec, w / w.sum(), means, covs, 0.0)


def _theta_from_moments(spec, w, means, covs, chol_floor):
    k, p = spec.n_components, spec.dim
    log_diags = np.empty((k, p))
    low_tris = np.empty((k, spec.n_tril))
    rows, cols = np.tril_indices(p, -1)
    for j in range(k):
        try:
            ll = np.linalg.cholesky(covs[j])
        except np.linalg.LinAlgError:
            ridge = max(np.trace(covs[j]) / p * 1e-6, 1e-12)
            ll = np.linalg.cholesky(covs[j] + ridge * np.eye(p))
        diag = np.maximum(np.diag(ll), chol_floor)
        log_diags[j] = np.log(diag)
        low_tris[j] = ll[rows, cols]
    logits = np.log(np.maximum(w, 1e-300))
    return pack(spec, logits, means, log_diags, low_tris)


def fit_mle(
    spec: GmmSpec,
    xs,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-8,
    n_init: int = 1,
    chol_floor: float = 1e-6,
) -> FitResult:
    """Fit by EM with k-means++ style initialization.

    Returns the parameter vector together with the per-iteration mean
    log-likelihood trace (non-decreasing up to floating-point slack when
    the Cholesky floor is inactive). ``n_init`` restarts keep the best
    final likelihood.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise InputError("data must be a 2-D array")
    n = xs.shape[0]
    if n == 0:
        raise InputError("data must be non-empty")
    if n < spec.n_components:
        raise InputError("need at least one observation per component")
    if xs.shape[1] != spec.dim:
        raise ContractViolation(f"data dim {xs.shape[1]} != spec dim {spec.dim}")

    best = None
    for init in range(max(1, n_init)):
        rng = np.random.default_rng(np.random.SeedSequence((seed, init)))
        result = _fit_single(spec, xs, rng, max_iter, tol, chol_floor)
        if best is None or result.loglik_trace[-1] > best.loglik_trace[-1]:
            best = result
    return best


def _fit_single(spec, xs, rng, max_iter, tol, chol_floor):
    k, p = spec.n_components, spec.dim
    n = xs.shape[0]
    centers = _kmeanspp_centers(xs, k, rng)
    d2 = ((xs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    w = np.full(k, 1.0 / k)
    means = centers.copy()
    base_cov = np.cov(xs.T, ddof=0).reshape(p, p) + 1e-6 * np.eye(p)
    covs = np.tile(base_cov, (k, 1, 1))
    for j in range(k):
        sel = xs[assign == j]
        if len(sel) > p:
            w[j] = len(sel) / n
            means[j] = sel.mean(axis=0)
            covs[j] = np.cov(sel.T, ddof=0).reshape(p, p) + 1e-9 * np.eye(p)
    w = w / w.sum()
    theta = _theta_from_moments(spec, w, means, covs, chol_floor)

    trace = []
    converged = False
    for _ in range(max_iter):
        a = component_log_joint(spec, theta, xs)
        m = a.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(a - m).sum(axis=1))
        logits = unpack(spec, theta)[0]
        mw = logits.max()
        lse_w = mw + np.log(np.exp(logits - mw).sum())
        trace.append(float((lse - lse_w).mean()))
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * (1 + abs(trace[-2])):
            converged = True
            break
        r = np.exp(a - lse[:, None])
        rk = r.sum(axis=0)
        rk_safe = np.maximum(rk, 1e-300)
        w = rk / n
        means = (r.T @ xs) / rk_safe[:, None]
        covs = np.empty((k, p, p))
        for j in range(k):
            diff = xs - means[j]
            covs[j] = (r[:, j][:, None] * diff).T @ diff / rk_safe[j]
        theta = _theta_from_moments(spec, w, means, covs, chol_floor)

    warning = None if converged else "EM did not converge within max_iter"
    return FitResult(
        theta=theta,
        loglik_trace=np.array(trace),
        converged=converged,
        warning=warning,
    )
