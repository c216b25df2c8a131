"""Empirical verification of the framework's theoretical guarantees.

Checks, at desk scale: the zero-mean score identity under model sampling;
martingale behavior of resampling chains (drift, second-moment bound,
Markov tail bound, Cauchy tail of the parameter sequence); and the
contraction trend experiment, which tracks how often resampled densities
miss the true cluster count and how far the recovered cluster regions are
from the truth as the training size grows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InputError
from .grids import GridDensity, grid_cluster_sets, grid_density, level_set_components, saddle_height, sup_distance
from .models import Model, fit_mle, sample_batch, score_batch
from .resample import ResampleConfig, resample_ensemble
from .uncertainty import clustering_distance


# ---------------------------------------------------------------------------
# Score identity
# ---------------------------------------------------------------------------


@dataclass
class ScoreIdentityResult:
    mean: np.ndarray
    stderr: np.ndarray
    n_mc: int
    max_abs_z: float

    def passed(self, z_limit: float = 5.0) -> bool:
        return self.max_abs_z <= z_limit


def check_score_identity(model: Model, theta, n_mc: int = 10_000, seed: int = 0,
                         score_shift: float = 0.0) -> ScoreIdentityResult:
    """Monte Carlo mean and stderr of the score under f_theta.

    ``score_shift`` adds a constant to every score coordinate; a nonzero
    shift is a negative control that must make the check fail.
    """
    if n_mc < 100:
        raise InputError("n_mc must be >= 100")
    rng = np.random.default_rng(seed)
    xs, _ = sample_batch(model, theta, n_mc, rng)
    s = score_batch(model, theta, xs) + score_shift
    mean = s.mean(axis=0)
    stderr = s.std(axis=0, ddof=1) / np.sqrt(n_mc)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(mean) / stderr
    # coordinates with exactly constant score: pass iff the constant is 0
    z[stderr == 0] = np.where(mean[stderr == 0] == 0.0, 0.0, np.inf)
    return ScoreIdentityResult(mean=mean, stderr=stderr, n_mc=n_mc, max_abs_z=float(z.max()))


def estimate_score_second_moment(model: Model, theta, n_mc: int = 2000, seed: int = 0) -> float:
    """Monte Carlo estimate of E ||s(Y; theta)||^2 under f_theta."""
    rng = np.random.default_rng(seed)
    xs, _ = sample_batch(model, theta, n_mc, rng)
    s = score_batch(model, theta, xs)
    return float((s**2).sum(axis=1).mean())


# ---------------------------------------------------------------------------
# Martingale checks on resampling chains
# ---------------------------------------------------------------------------


@dataclass
class MartingaleReport:
    n_chains: int
    drift_max_z: float
    l2_mean: float
    l2_bound: float
    cauchy_mean: float
    cauchy_bound: float
    v_hat: float
    markov: list = field(default_factory=list)  # (delta, frac, bound) triples

    def passed(self, z_limit: float = 5.0) -> bool:
        return (
            self.drift_max_z <= z_limit
            and self.l2_mean <= self.l2_bound
            and self.cauchy_mean <= self.cauchy_bound
            and all(frac <= bound for _, frac, bound in self.markov)
        )


def martingale_checks(
    model: Model,
    theta0,
    cfg: ResampleConfig,
    n_chains: int = 500,
    n_mc_vhat: int = 2000,
    n_vhat_chains: int = 5,
    n_markov_deltas: int = 10,
    n_workers: int = 1,
) -> MartingaleReport:
    """Drift / L2 / Markov / Cauchy checks over an ensemble of chains.

    V-hat is the largest Monte Carlo estimate of E||s||^2 over parameter
    states visited along a subsample of chains (start, midpoint, horizon,
    doubled horizon), which instantiates the uniform second-moment constant
    of the convergence argument.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    n_steps = cfg.n_steps
    cps = sorted({max(1, n_steps // 2), n_steps, 2 * n_steps})
    cfg_run = replace(cfg, n_chains=n_chains)
    results = resample_ensemble(model, theta0, cfg_run, n_workers=n_workers, checkpoint_steps=cps)

    deltas = np.stack([r.theta_final - theta0 for r in results])
    mean = deltas.mean(axis=0)
    stderr = deltas.std(axis=0, ddof=1) / np.sqrt(n_chains)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(mean) / stderr
    z[stderr == 0] = np.where(mean[stderr == 0] == 0.0, 0.0, np.inf)
    drift_max_z = float(z.max())

    norms_sq = (deltas**2).sum(axis=1)
    l2_mean = float(norms_sq.mean())
    tail_sq = np.stack(
        [((r.snapshots[2 * n_steps] - r.snapshots[n_steps]) ** 2).sum() for r in results]
    )
    cauchy_mean = float(tail_sq.mean())

    v_hat = estimate_score_second_moment(model, theta0, n_mc_vhat, seed=cfg.seed + 1)
    for r in results[: min(n_vhat_chains, len(results))]:
        for step, th in sorted(r.snapshots.items()):
            est = estimate_score_second_moment(
                model, th, n_mc_vhat, seed=cfg.seed + 1000 + r.chain_index * 10 + step % 7
            )
            v_hat = max(v_hat, est)

    l2_bound = v_hat * cfg.eta0**2 / (cfg.n_train - 1)
    cauchy_bound = v_hat * cfg.eta0**2 / (cfg.n_train + n_steps - 1)

    norms = np.sqrt(norms_sq)
    positive = norms[norms > 0]
    lo = float(np.median(positive)) if positive.size else 1e-6
    deltas_grid = np.geomspace(max(lo, 1e-12), max(norms.max() * 2, 1e-10), n_markov_deltas)
    markov = []
    for delta in deltas_grid:
        frac = float((norms > delta).mean())
        bound = float(v_hat * cfg.eta0**2 / ((cfg.n_train - 1) * delta**2))
        markov.append((float(delta), frac, bound))

    return MartingaleReport(
        n_chains=n_chains,
        drift_max_z=drift_max_z,
        l2_mean=l2_mean,
        l2_bound=l2_bound,
        cauchy_mean=cauchy_mean,
        cauchy_bound=cauchy_bound,
        v_hat=v_hat,
        markov=markov,
    )


def displacement_scaling(
    model: Model,
    theta0,
    cfg: ResampleConfig,
    n_small: int = 100,
    n_large: int = 10_000,
    n_chains: int = 300,
    n_workers: int = 1,
):
    """Mean squared displacement at two training sizes.

    Under the martingale second-moment identity the ratio should track
    (n_large - 1) / (n_small - 1) once the horizon is long relative to both
    sizes. Returns (mean_small, mean_large, ratio, expected_ratio).
    """
    out = []
    for n in (n_small, n_large):
        cfg_n = replace(cfg, n_train=n, n_chains=n_chains)
        results = resample_ensemble(model, theta0, cfg_n, n_workers=n_workers)
        out.append(float(np.mean([r.displacement_sq for r in results])))
    ratio = out[0] / out[1]
    return out[0], out[1], ratio, (n_large - 1) / (n_small - 1)


# ---------------------------------------------------------------------------
# Level utilities for the clustering-consistency conditions
# ---------------------------------------------------------------------------


def default_level(grid: GridDensity) -> float:
    """Level halfway between the separating valley and the lower main peak.

    The two highest grid local maxima (under grid adjacency) define the
    peaks; the valley is the bottleneck between them (their saddle height).
    """
    peaks = _local_maxima(grid)
    if len(peaks) < 2:
        raise InputError("density has fewer than two grid modes")
    top2 = peaks[:2]
    saddle = saddle_height(grid, np.array([top2[0][1]]), np.array([top2[1][1]]))
    lower_peak = top2[1][0]
    return saddle + 0.5 * (lower_peak - saddle)


def _local_maxima(grid: GridDensity):
    """(value, flat_index) of local maxima, best first.

    A node qualifies when no neighbor exceeds it; plateaus contribute one
    representative (the member with no equal-valued earlier neighbor).
    """
    values = grid.values.ravel()
    from .grids import _grid_neighbors

    out = []
    for flat in range(values.size):
        nbs = list(_grid_neighbors(grid.values.shape, flat))
        if any(values[nb] > values[flat] for nb in nbs):
            continue
        if any(values[nb] == values[flat] and nb < flat for nb in nbs):
            continue
        if all(values[nb] == values[flat] for nb in nbs) and len(nbs) > 1:
            continue  # interior of a flat region, not a peak front
        out.append((float(values[flat]), flat))
    out.sort(key=lambda t: (-t[0], t[1]))
    return out


def verify_level_conditions(grid: GridDensity, c: float, eta: float) -> dict:
    """Empirical analogues of the margin/saddle/core-set conditions at level c."""
    k_at_c, _ = level_set_components(grid, c)
    k_hi, _ = level_set_components(grid, c + eta)
    k_lo, _ = level_set_components(grid, c - eta)
    peaks = _local_maxima(grid)
    saddle_ok = True
    if len(peaks) >= 2 and k_at_c >= 2:
        saddle = saddle_height(grid, np.array([peaks[0][1]]), np.array([peaks[1][1]]))
        saddle_ok = saddle < c
    return {
        "k_at_level": k_at_c,
        "components_stable": k_hi == k_at_c == k_lo,
        "saddle_below_level": saddle_ok,
    }


# ---------------------------------------------------------------------------
# Contraction experiment (consistency trends across training sizes)
# ---------------------------------------------------------------------------


@dataclass
class ContractionArm:
    n_train: int
    fit_error: float
    eps_tilde: float
    frac_dist_exceed: float
    frac_k_mismatch: float
    mean_discrepancy: float | None


@dataclass
class ContractionReport:
    k_true: int
    level_c: float
    arms: list

    def to_dict(self) -> dict:
        return {
            "k_true": self.k_true,
            "level_c": self.level_c,
            "arms": [asdict(a) for a in self.arms],
        }


def contraction_experiment(
    true_model: Model,
    theta_true,
    fit_model: Model,
    n_levels,
    box,
    resolution: int,
    resample_opts: dict | None = None,
    fit_opts: dict | None = None,
    level_c: float | None = None,
    eps_mult: float = 2.0,
    n_replications: int = 1,
    seed: int = 0,
    n_workers: int = 1,
) -> ContractionReport:
    """Fit/resample/cluster at increasing n and record consistency trends.

    For each training size: simulate data from the true model, fit, run the
    resampling ensemble, and measure per chain the sup-distance to the true
    grid density, the level-c cluster count, and (when the count matches)
    the Lebesgue matching distance between grid cluster families. With
    ``n_replications > 1`` each arm is repeated on independent data draws
    and the per-chain statistics are pooled, which damps fit-level noise in
    the trend.
    """
    resample_opts = dict(resample_opts or {})
    fit_opts = dict(fit_opts or {})
    grid_true = grid_density(true_model, theta_true, box, resolution)
    if level_c is None:
        level_c = default_level(grid_true)
    k_true, _ = level_set_components(grid_true, level_c)
    true_sets = grid_cluster_sets(grid_true, level_c)
    cellvol = np.full(grid_true.values.size, grid_true.cell_volume)

    arms = []
    for arm_idx, n in enumerate(n_levels):
        fit_errors = []
        exceed_flags = []
        mismatch_flags = []
        discrepancies = []
        for rep in range(max(1, n_replications)):
            rng = np.random.default_rng(np.random.SeedSequence((seed, arm_idx, rep)))
            xs, _ = sample_batch(true_model, theta_true, n, rng)
            fit = fit_mle(fit_model, xs, seed=seed + 17 * arm_idx + 1009 * rep, **fit_opts)
            grid_fit = grid_density(fit_model, fit.theta, box, resolution)
            fit_error = sup_distance(grid_fit, grid_true)
            eps_tilde = eps_mult * fit_error
            fit_errors.append(fit_error)

            cfg = ResampleConfig(
                n_train=n, seed=seed + 1000 + arm_idx + 101 * rep, **resample_opts
            )
            results = resample_ensemble(fit_model, fit.theta, cfg, n_workers=n_workers)
            for res in results:
                grid_chain = grid_density(fit_model, res.theta_final, box, resolution)
                exceed_flags.append(sup_distance(grid_chain, grid_true) > eps_tilde)
                k_f, _ = level_set_components(grid_chain, level_c)
                mismatch_flags.append(k_f != k_true)
                if k_f == k_true:
                    chain_sets = grid_cluster_sets(grid_chain, level_c)
                    discrepancies.append(
                        clustering_distance(chain_sets, true_sets, atom_measure=cellvol)
                    )
        arms.append(
            ContractionArm(
                n_train=n,
                fit_error=float(np.mean(fit_errors)),
                eps_tilde=float(eps_mult * np.mean(fit_errors)),
                frac_dist_exceed=float(np.mean(exceed_flags)),
                frac_k_mismatch=float(np.mean(mismatch_flags)),
                mean_discrepancy=float(np.mean(discrepancies)) if discrepancies else None,
            )
        )
    return ContractionReport(k_true=k_true, level_c=float(level_c), arms=arms)
