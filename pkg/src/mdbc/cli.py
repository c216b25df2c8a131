"""Command-line driver: generate data, fit, resample, cluster, summarize.

All commands read a single JSON config; any field can be overridden with
``--set section.key=value`` (values parse as JSON literals). The env var
``MDBC_SEED`` overrides the config seed. Exit codes: 0 success, 2 config
error, 3 check failure, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backend, diagnostics
from .data import Dataset, gen_circles, gen_gmm, load_dataset, save_dataset, standardize
from .errors import ContractViolation, InputError
from .levelset import (
    Labeling,
    LevelSetParams,
    adaptive_radius,
    cluster_upper_level,
    load_labelings,
    save_labelings,
    threshold_from_percentile,
)
from .models import (
    Model,
    fit_mle,
    from_json,
    gaussian_mixture,
    log_density_batch,
    model_from_spec_dict,
    to_json,
)
from .models.gmm import theta_from_moments
from .resample import ResampleConfig, load_ensemble, resample_ensemble, save_ensemble
from .tomato import density_weights, knn_graph, save_persistence_csv, tomato_cluster
from .uncertainty import (
    certainty_scores,
    cluster_count_posterior,
    coclustering_matrix,
    save_certainty_csv,
    save_cocluster,
    save_count_posterior,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3
EXIT_RUNTIME = 4


class CheckFailure(RuntimeError):
    """A diagnostics check did not meet its configured tolerance."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "threads": None,  # None -> logical cores
    "paths": {"data": None, "out_dir": "artifacts"},
    "data": {
        "generator": "circles",
        "n": 2000,
        "noise_sd": 0.15,
        "factor": 0.25,
        "outer_fraction": 0.8,
        "standardize": True,
        # used by generator == "gmm_1d"
        "truth": {"weights": [0.5, 0.5], "means": [-2.0, 2.0], "sds": [0.7, 0.7]},
    },
    "model": {
        "family": "gmm",
        "n_components": 24,
        "n_layers": 4,
        "hidden": 16,
        "fit": {"max_iter": 300, "tol": 1e-8, "n_init": 4, "chol_floor": 1e-6},
    },
    "resample": {
        "n_steps": 1000,
        "n_chains": 200,
        "eta0": 0.02,
        "schedule_offset": 1,
        "clip": 100.0,
        "nan_policy": "zero",
    },
    "clustering": {
        "backend": "levelset",
        "tau_percentile": 10.0,
        "r_kth": 10,
        "r_factor": 1.2,
        "min_cluster_size": 100,
        "knn_k": 20,
        "tau_merge": 0.5,
    },
    "diagnostics": {
        "score_identity": {
            "n_theta": 20,
            "n_mc": 10000,
            "z_limit": 5.0,
            "theta_scale": 0.5,
            "models": [
                {"family": "gmm", "n_components": 2, "dim": 1},
                {"family": "coupling_flow", "dim": 2, "n_layers": 2, "hidden": 8},
            ],
        },
        "martingale": {
            "model": {"family": "gmm", "n_components": 2, "dim": 1},
            "truth": {"weights": [0.5, 0.5], "means": [-2.0, 2.0], "sds": [0.7, 0.7]},
            "n_train": 1000,
            "n_steps": 1000,
            "eta0": 0.02,
            "n_chains": 500,
            "z_limit": 5.0,
        },
        "contraction": {
            "truth": {"weights": [0.5, 0.5], "means": [-2.0, 2.0], "sds": [0.7, 0.7]},
            "n_levels": [200, 800, 3200],
            "n_chains": 200,
            "n_steps": 1000,
            "eta0": 0.02,
            "box": [-6.0, 6.0],
            "resolution": 512,
            "eps_mult": 2.0,
            "n_replications": 3,
            "max_inversion": 0.05,
            "min_discrepancy_drop": 0.3,
        },
    },
}

PROFILES = {
    "desk": {"data.n": 2000, "resample.n_chains": 200, "resample.n_steps": 1000},
    "paper": {"data.n": 5000, "resample.n_chains": 1000, "resample.n_steps": 3000},
}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _set_by_path(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise InputError(f"unknown config section {dotted!r}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise InputError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def _parse_set(value: str):
    if "=" not in value:
        raise InputError(f"--set expects key=value, got {value!r}")
    key, raw = value.split("=", 1)
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError:
        parsed = raw
    return key, parsed


def load_config(path: str | None, sets=(), profile: str | None = None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path!r}: {exc}") from exc
        _merge(config, user)
    if profile:
        if profile not in PROFILES:
            raise InputError(f"unknown profile {profile!r}")
        for key, value in PROFILES[profile].items():
            _set_by_path(config, key, value)
    for item in sets:
        key, value = _parse_set(item)
        _set_by_path(config, key, value)
    env_seed = os.environ.get("MDBC_SEED")
    if env_seed is not None:
        try:
            config["seed"] = int(env_seed)
        except ValueError as exc:
            raise InputError(f"MDBC_SEED must be an integer, got {env_seed!r}") from exc
    return config


def _merge(base: dict, override: dict) -> None:
    for key, value in override.items():
        if key not in base:
            raise InputError(f"unknown config key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _merge(base[key], value)
        else:
            base[key] = value


def config_hash(config: dict) -> str:
    """Hash of the semantically meaningful fields (paths/threads excluded)."""
    semantic = {k: v for k, v in config.items() if k not in ("paths", "threads")}
    canon = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _threads(config: dict) -> int:
    t = config.get("threads")
    return int(t) if t else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _build_model(section: dict, dim: int) -> Model:
    family = section["family"]
    if family == "gmm":
        return gaussian_mixture(section["n_components"], dim)
    if family == "coupling_flow":
        return model_from_spec_dict(
            "coupling_flow",
            {"dim": dim, "n_layers": section["n_layers"], "hidden": section["hidden"]},
        )
    raise InputError(f"unknown model family {family!r}")


def _truth_model_1d(truth: dict):
    means = np.asarray(truth["means"], dtype=np.float64)
    sds = np.asarray(truth["sds"], dtype=np.float64)
    w = np.asarray(truth["weights"], dtype=np.float64)
    model = gaussian_mixture(len(w), 1)
    covs = (sds**2).reshape(-1, 1, 1)
    theta = theta_from_moments(model.spec, w, means.reshape(-1, 1), covs)
    return model, theta


def stage_data(config: dict, out_dir: Path) -> Dataset:
    path = config["paths"]["data"]
    if path:
        raw = load_dataset(path)
    else:
        section = config["data"]
        if section["generator"] == "circles":
            raw = gen_circles(
                section["n"],
                noise_sd=section["noise_sd"],
                factor=section["factor"],
                outer_fraction=section["outer_fraction"],
                seed=config["seed"],
            )
        elif section["generator"] == "gmm_1d":
            model, theta = _truth_model_1d(section["truth"])
            raw = gen_gmm(model, theta, section["n"], seed=config["seed"])
        else:
            raise InputError(f"unknown generator {section['generator']!r}")
    save_dataset(out_dir / "data.csv", raw)
    if config["data"].get("standardize", True):
        data, _ = standardize(raw)
    else:
        data = raw
    return data


def stage_fit(config: dict, data: Dataset, out_dir: Path):
    model = _build_model(config["model"], data.dim)
    opts = dict(config["model"].get("fit", {}))
    if model.family != "gmm":
        opts = {k: v for k, v in opts.items() if k in ("epochs", "batch_size", "learning_rate")}
    fit = fit_mle(model, data.points, seed=config["seed"], **opts)
    (out_dir / "model.json").write_text(to_json(model, fit.theta))
    (out_dir / "fit.json").write_text(
        json.dumps(
            {
                "loglik_trace": list(map(float, fit.loglik_trace)),
                "converged": bool(fit.converged),
                "warning": fit.warning,
            }
        )
    )
    return model, fit.theta


def stage_resample(config: dict, model: Model, theta, data: Dataset, out_dir: Path):
    section = config["resample"]
    cfg = ResampleConfig(
        n_train=data.n,
        n_steps=section["n_steps"],
        n_chains=section["n_chains"],
        eta0=section["eta0"],
        schedule_offset=section["schedule_offset"],
        clip=section["clip"],
        nan_policy=section["nan_policy"],
        seed=config["seed"],
    )
    results = resample_ensemble(model, theta, cfg, n_workers=_threads(config))
    save_ensemble(out_dir, model, theta, cfg, results)
    return cfg, results


def _levelset_params(config: dict, model: Model, theta, data: Dataset) -> LevelSetParams:
    """Threshold and radius derived once from the trained density."""
    section = config["clustering"]
    logdens = log_density_batch(model, theta, data.points)
    tau = threshold_from_percentile(logdens, section["tau_percentile"])
    core = data.points[logdens > tau]
    r, _ = adaptive_radius(core, kth=section["r_kth"], factor=section["r_factor"])
    return LevelSetParams(
        tau=tau,
        r=r,
        min_cluster_size=section["min_cluster_size"],
        tau_percentile=section["tau_percentile"],
        r_kth=section["r_kth"],
        r_factor=section["r_factor"],
    )


def stage_cluster(config: dict, model: Model, theta, thetas, data: Dataset, out_dir: Path):
    """Cluster the trained density and every resampled density."""
    section = config["clustering"]
    backend_name = section["backend"]
    labelings: list[Labeling] = []
    if backend_name == "levelset":
        params = _levelset_params(config, model, theta, data)
        (out_dir / "cluster_params.json").write_text(
            json.dumps({"backend": "levelset", "tau": params.tau, "r": params.r,
                        "min_cluster_size": params.min_cluster_size})
        )
        trained = cluster_upper_level(
            data.points, log_density_batch(model, theta, data.points), params
        )
        for th in thetas:
            logdens = log_density_batch(model, th, data.points)
            labelings.append(cluster_upper_level(data.points, logdens, params))
    elif backend_name == "tomato":
        graph = knn_graph(data.points, section["knn_k"])
        tau_merge = section["tau_merge"]
        (out_dir / "cluster_params.json").write_text(
            json.dumps({"backend": "tomato", "k": section["knn_k"], "tau_merge": tau_merge})
        )
        weights = density_weights(log_density_batch(model, theta, data.points))
        trained, pairs = tomato_cluster(graph, weights, tau_merge)
        save_persistence_csv(out_dir / "persistence.csv", pairs)
        for th in thetas:
            weights = density_weights(log_density_batch(model, th, data.points))
            lab, _ = tomato_cluster(graph, weights, tau_merge)
            labelings.append(lab)
    else:
        raise InputError(f"unknown clustering backend {backend_name!r}")

    save_labelings(out_dir / "labels.csv", labelings)
    save_labelings(out_dir / "trained_labels.csv", [trained])
    return trained, labelings


def stage_uncertainty(config: dict, labelings, out_dir: Path):
    m = coclustering_matrix(labelings)
    save_cocluster(out_dir, m)
    scores = certainty_scores(m)
    save_certainty_csv(out_dir / "certainty.csv", scores)
    posterior = cluster_count_posterior(labelings)
    save_count_posterior(out_dir / "cluster_counts.json", posterior)
    return m, scores, posterior


def stage_plots(data: Dataset, trained: Labeling, scores, out_dir: Path) -> list[str]:
    if data.dim != 2:
        return ["plots skipped: data is not 2-D"]
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "mdbc"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(data.points[:, 0], data.points[:, 1], c=trained.labels, s=4, cmap="tab10")
    ax.set_title("clusters under the trained density")
    fig.savefig(out_dir / "clusters.svg")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.6, 5))
    sc = ax.scatter(data.points[:, 0], data.points[:, 1], c=scores, s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="co-clustering certainty")
    ax.set_title("point-wise certainty")
    fig.savefig(out_dir / "certainty.svg")
    plt.close(fig)
    return []


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(config: dict, out_dir: Path) -> int:
    stage_data(config, out_dir)
    print(f"wrote {out_dir / 'data.csv'}")
    return EXIT_OK


def cmd_fit(config: dict, out_dir: Path) -> int:
    data = stage_data(config, out_dir)
    stage_fit(config, data, out_dir)
    print(f"wrote {out_dir / 'model.json'}")
    return EXIT_OK


def cmd_resample(config: dict, out_dir: Path) -> int:
    data = stage_data(config, out_dir)
    model, theta = _load_or_fit(config, data, out_dir)
    stage_resample(config, model, theta, data, out_dir)
    print(f"wrote {out_dir / 'thetas.bin'}")
    return EXIT_OK


def cmd_cluster(config: dict, out_dir: Path) -> int:
    data = stage_data(config, out_dir)
    model, theta = _load_or_fit(config, data, out_dir)
    _, _, _, thetas, _ = load_ensemble(out_dir)
    stage_cluster(config, model, theta, thetas, data, out_dir)
    print(f"wrote {out_dir / 'labels.csv'}")
    return EXIT_OK


def cmd_uncertainty(config: dict, out_dir: Path) -> int:
    labelings = load_labelings(out_dir / "labels.csv")
    stage_uncertainty(config, labelings, out_dir)
    print(f"wrote {out_dir / 'cocluster.bin'}")
    return EXIT_OK


def _load_or_fit(config: dict, data: Dataset, out_dir: Path):
    model_path = out_dir / "model.json"
    if model_path.exists():
        model, theta = from_json(model_path.read_text())
        if theta is not None and model.dim == data.dim:
            return model, theta
    return stage_fit(config, data, out_dir)


def cmd_pipeline(config: dict, out_dir: Path) -> int:
    manifest = {
        "version": __version__,
        "backend": "kernels" if backend.HAVE_KERNELS else "fallback",
        "config": config,
        "config_hash": config_hash(config),
        "stages": {},
        "status": "running",
    }
    stages = [
        ("data", lambda st: st.update(data=stage_data(config, out_dir))),
        ("fit", lambda st: st.update(model_theta=stage_fit(config, st["data"], out_dir))),
        (
            "resample",
            lambda st: st.update(
                ensemble=stage_resample(config, *st["model_theta"], st["data"], out_dir)
            ),
        ),
        (
            "cluster",
            lambda st: st.update(
                clustered=stage_cluster(
                    config,
                    *st["model_theta"],
                    np.stack([r.theta_final for r in st["ensemble"][1]]),
                    st["data"],
                    out_dir,
                )
            ),
        ),
        (
            "uncertainty",
            lambda st: st.update(summary=stage_uncertainty(config, st["clustered"][1], out_dir)),
        ),
        (
            "plots",
            lambda st: st.update(
                notes=stage_plots(st["data"], st["clustered"][0], st["summary"][1], out_dir)
            ),
        ),
    ]
    state: dict = {}
    try:
        for name, fn in stages:
            start = time.perf_counter()
            fn(state)
            manifest["stages"][name] = {"seconds": round(time.perf_counter() - start, 3)}
    except Exception as exc:  # noqa: BLE001 - manifest must record the failed stage
        manifest["status"] = "failed"
        manifest["failed_stage"] = name
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        raise
    manifest["status"] = "ok"
    if state.get("notes"):
        manifest["notes"] = state["notes"]
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"pipeline complete: {out_dir}")
    return EXIT_OK


def cmd_diagnostics(config: dict, out_dir: Path, negative_control: bool = False) -> int:
    section = config["diagnostics"]
    seed = config["seed"]
    report: dict = {"checks": []}
    failures = []

    def record(name: str, passed: bool, detail: dict):
        report["checks"].append({"name": name, "passed": bool(passed), **detail})
        line = "PASS" if passed else "FAIL"
        print(f"{line} {name}: {json.dumps(detail, default=float)}")
        if not passed:
            failures.append(name)

    si = section["score_identity"]
    shift = 1.0 if negative_control else 0.0
    rng = np.random.default_rng(seed)
    for spec_dict in si["models"]:
        model = model_from_spec_dict(spec_dict["family"], spec_dict)
        worst = 0.0
        for _ in range(si["n_theta"]):
            theta = si["theta_scale"] * rng.standard_normal(model.n_params)
            res = diagnostics.check_score_identity(
                model, theta, n_mc=si["n_mc"], seed=int(rng.integers(2**31)), score_shift=shift
            )
            worst = max(worst, res.max_abs_z)
        record(
            f"score_identity[{model.family}]",
            worst <= si["z_limit"],
            {"max_abs_z": worst, "z_limit": si["z_limit"]},
        )

    ma = section["martingale"]
    model, theta_true = _truth_model_1d(ma["truth"])
    fit_model = _build_model({**ma["model"], "family": ma["model"]["family"]}, 1)
    data = gen_gmm(model, theta_true, ma["n_train"], seed=seed)
    fit = fit_mle(fit_model, data.points, seed=seed)
    cfg = ResampleConfig(
        n_train=ma["n_train"], n_steps=ma["n_steps"], n_chains=ma["n_chains"],
        eta0=ma["eta0"], seed=seed,
    )
    mr = diagnostics.martingale_checks(
        fit_model, fit.theta, cfg, n_chains=ma["n_chains"], n_workers=_threads(config)
    )
    record(
        "martingale_drift", mr.drift_max_z <= ma["z_limit"],
        {"drift_max_z": mr.drift_max_z, "z_limit": ma["z_limit"]},
    )
    record("martingale_l2", mr.l2_mean <= mr.l2_bound, {"l2_mean": mr.l2_mean, "l2_bound": mr.l2_bound})
    record(
        "martingale_cauchy", mr.cauchy_mean <= mr.cauchy_bound,
        {"cauchy_mean": mr.cauchy_mean, "cauchy_bound": mr.cauchy_bound},
    )
    record(
        "markov_bound",
        all(frac <= bound for _, frac, bound in mr.markov),
        {"deltas": [[d, f, b] for d, f, b in mr.markov]},
    )

    co = section["contraction"]
    truth_model, theta_true = _truth_model_1d(co["truth"])
    creport = diagnostics.contraction_experiment(
        truth_model,
        theta_true,
        gaussian_mixture(len(co["truth"]["weights"]), 1),
        co["n_levels"],
        box=[tuple(co["box"])],
        resolution=co["resolution"],
        resample_opts={"n_steps": co["n_steps"], "n_chains": co["n_chains"], "eta0": co["eta0"]},
        eps_mult=co["eps_mult"],
        n_replications=co.get("n_replications", 1),
        seed=seed,
        n_workers=_threads(config),
    )
    report["contraction"] = creport.to_dict()
    fracs = [arm.frac_k_mismatch for arm in creport.arms]
    monotone = all(
        fracs[i + 1] <= fracs[i] + co["max_inversion"] for i in range(len(fracs) - 1)
    )
    record("contraction_k_trend", monotone, {"frac_k_mismatch": fracs})
    discs = [arm.mean_discrepancy for arm in creport.arms]
    if discs[0] is not None and discs[-1] is not None and discs[0] > 0:
        drop = 1.0 - discs[-1] / discs[0]
    else:
        drop = 0.0
    record(
        "contraction_discrepancy_drop",
        drop >= co["min_discrepancy_drop"],
        {"mean_discrepancy": discs, "drop": drop},
    )

    (out_dir / "diagnostics_report.json").write_text(json.dumps(report, indent=2, default=float))
    if failures:
        print(f"failed checks: {', '.join(failures)}", file=sys.stderr)
        raise CheckFailure(", ".join(failures))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdbc", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": "generate a synthetic dataset",
        "fit": "fit the density model",
        "resample": "run the predictive-resampling ensemble",
        "cluster": "cluster each resampled density",
        "uncertainty": "summarize the clustering ensemble",
        "pipeline": "run all stages end to end",
        "diagnostics": "run the theory-check suite",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (JSON literal value)")
        p.add_argument("--profile", choices=sorted(PROFILES), default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        if name == "diagnostics":
            p.add_argument("--negative-control", action="store_true",
                           help="corrupt the score by +1; the identity check must fail")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, sets=args.set, profile=args.profile)
        if args.threads is not None:
            config["threads"] = args.threads
        if args.out_dir is not None:
            config["paths"]["out_dir"] = args.out_dir
        out_dir = Path(config["paths"]["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
    except (InputError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    handlers = {
        "gen-data": cmd_gen_data,
        "fit": cmd_fit,
        "resample": cmd_resample,
        "cluster": cmd_cluster,
        "uncertainty": cmd_uncertainty,
        "pipeline": cmd_pipeline,
    }
    try:
        if args.command == "diagnostics":
            return cmd_diagnostics(config, out_dir, negative_control=args.negative_control)
        return handlers[args.command](config, out_dir)
    except CheckFailure:
        return EXIT_CHECK
    except (InputError, ContractViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
