"""Score-based predictive resampling.

Each chain performs ``N`` updates ``theta <- theta + eta_k * s(Y_k; theta)``
with ``Y_k`` drawn from the current density and ``eta_k = eta0 / (n + k - o)``.
Chains are independent: chain ``t`` owns the random stream seeded by
``SeedSequence((seed, t))`` (Philox, counter-based), and all of a chain's
variates are pre-drawn in fixed-order blocks. Results are therefore
byte-identical no matter how many workers execute the ensemble.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .errors import InputError
from .models import Model, from_json, to_json, variates_per_draw


@dataclass(frozen=True)
class ResampleConfig:
    """Chain schedule and ensemble size; defaults follow the paper profile."""

    n_train: int
    n_steps: int = 3000
    n_chains: int = 1000
    eta0: float = 0.02
    schedule_offset: int = 1
    clip: float = 100.0
    nan_policy: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 2:
            raise InputError("n_train must be >= 2")
        # n_steps == 0 is a null run that returns theta0 (used by diagnostics)
        if self.n_steps < 0 or self.n_chains < 1:
            raise InputError("n_steps must be >= 0 and n_chains >= 1")
        if self.eta0 <= 0:
            raise InputError("eta0 must be positive")
        if self.schedule_offset not in (0, 1):
            raise InputError("schedule_offset must be 0 or 1")
        # clip == 0 is allowed: it freezes the chain (useful as a null run)
        if self.clip < 0:
            raise InputError("clip must be >= 0")
        if self.nan_policy != "zero":
            raise InputError("only nan_policy='zero' is supported")

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_steps": self.n_steps,
            "n_chains": self.n_chains,
            "eta0": self.eta0,
            "schedule_offset": self.schedule_offset,
            "clip": self.clip,
            "nan_policy": self.nan_policy,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResampleConfig":
        return cls(**d)


def step_size(cfg: ResampleConfig, k: int) -> float:
    """Learning rate at 1-based step k."""
    return cfg.eta0 / (cfg.n_train + k - cfg.schedule_offset)


@dataclass
class ChainResult:
    chain_index: int
    theta_final: np.ndarray = field(repr=False)
    n_clipped: int = 0
    n_nan_replaced: int = 0
    displacement_sq: float = 0.0
    snapshots: dict[int, np.ndarray] | None = None


def chain_rng(seed: int, chain_index: int, substream: int = 0) -> np.random.Generator:
    """Independent counter-based stream for one chain.

    Substreams separate variate kinds (0: uniforms, 1: normals), so the
    variates consumed at step k do not depend on the run horizon.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((seed, chain_index, substream)))
    )


def resample_chain(
    model: Model,
    theta0,
    cfg: ResampleConfig,
    chain_index: int,
    checkpoint_steps=None,
) -> ChainResult:
    """Run one chain; fully deterministic given (cfg.seed, chain_index).

    ``checkpoint_steps`` optionally extends the run past ``cfg.n_steps`` and
    records theta at each listed step; ``theta_final`` always refers to step
    ``cfg.n_steps``.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if not np.all(np.isfinite(theta0)):
        raise InputError("theta0 contains non-finite entries")
    if not (0 <= chain_index < cfg.n_chains):
        raise InputError("chain_index out of range")
    steps = {cfg.n_steps}
    if checkpoint_steps is not None:
        steps.update(int(s) for s in checkpoint_steps)
    if min(steps) < 0:
        raise InputError("checkpoint steps must be >= 0")
    run_steps = sorted(s for s in steps if s >= 1)
    by_step: dict[int, np.ndarray] = {}
    if 0 in steps:
        by_step[0] = theta0.copy()

    n_clipped = 0
    n_nan = 0
    if run_steps:
        cps = np.array(run_steps, dtype=np.int64)
        horizon = int(cps[-1])
        n_u, n_z = variates_per_draw(model)
        uniforms = chain_rng(cfg.seed, chain_index, 0).random(horizon) if n_u else None
        normals = chain_rng(cfg.seed, chain_index, 1).standard_normal((horizon, n_z))

        if model.family == "gmm":
            snaps, n_clipped, n_nan = backend.gmm_chain(
                model.spec, theta0, uniforms, normals,
                float(cfg.n_train), cfg.eta0, cfg.schedule_offset, cfg.clip, cps,
            )
        else:
            snaps, n_clipped, n_nan = backend.generic_chain(
                model, theta0, uniforms, normals,
                float(cfg.n_train), cfg.eta0, cfg.schedule_offset, cfg.clip, cps,
            )
        by_step.update({int(s): snaps[i] for i, s in enumerate(cps)})
    theta_final = by_step[cfg.n_steps]
    if not np.all(np.isfinite(theta_final)):
        # cannot happen post-clipping; a failure here is an internal bug
        raise RuntimeError("chain produced a non-finite parameter vector")
    return ChainResult(
        chain_index=chain_index,
        theta_final=theta_final,
        n_clipped=n_clipped,
        n_nan_replaced=n_nan,
        displacement_sq=float(((theta_final - theta0) ** 2).sum()),
        snapshots=by_step if checkpoint_steps is not None else None,
    )


def _ensemble_task(args):
    model_json, theta0, cfg_dict, indices, checkpoint_steps = args
    model, _ = from_json(model_json)
    cfg = ResampleConfig.from_dict(cfg_dict)
    theta0 = np.asarray(theta0)
    return [
        resample_chain(model, theta0, cfg, i, checkpoint_steps=checkpoint_steps)
        for i in indices
    ]


def resample_ensemble(
    model: Model,
    theta0,
    cfg: ResampleConfig,
    n_workers: int = 1,
    checkpoint_steps=None,
) -> list[ChainResult]:
    """Run cfg.n_chains independent chains; output ordered by chain index.

    Parallelism is a pure throughput knob: chains derive their streams from
    (seed, chain_index) alone, so any worker count yields identical bytes.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    indices = list(range(cfg.n_chains))
    if n_workers is None:
        n_workers = 1
    if n_workers <= 1 or cfg.n_chains == 1:
        return _ensemble_task((to_json(model), theta0, cfg.to_dict(), indices, checkpoint_steps))

    n_chunks = min(cfg.n_chains, 4 * n_workers)
    chunks = [indices[i::n_chunks] for i in range(n_chunks)]
    tasks = [
        (to_json(model), theta0, cfg.to_dict(), chunk, checkpoint_steps)
        for chunk in chunks
        if chunk
    ]
    results: list[ChainResult | None] = [None] * cfg.n_chains
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        for chunk_results in pool.map(_ensemble_task, tasks):
            for res in chunk_results:
                results[res.chain_index] = res
    return results  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Persistence: JSON header + raw little-endian float64 matrix + CSV counters
# ---------------------------------------------------------------------------


def save_ensemble(out_dir, model: Model, theta0, cfg: ResampleConfig, results) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    thetas = np.stack([r.theta_final for r in results])
    header = {
        "config": cfg.to_dict(),
        "model": json.loads(to_json(model, theta0)),
        "shape": [len(results), int(thetas.shape[1])],
        "dtype": "<f8",
        "order": "C",
        "thetas_file": "thetas.bin",
        "counters_file": "counters.csv",
    }
    (out / "ensemble.json").write_text(json.dumps(header, indent=2))
    (out / "thetas.bin").write_bytes(np.ascontiguousarray(thetas, dtype="<f8").tobytes())
    with open(out / "counters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain_index", "n_clipped", "n_nan_replaced", "displacement_sq"])
        for r in results:
            writer.writerow([r.chain_index, r.n_clipped, r.n_nan_replaced, repr(r.displacement_sq)])


def load_ensemble(out_dir):
    """Returns (model, theta0, cfg, thetas, counters-rows)."""
    out = Path(out_dir)
    header = json.loads((out / "ensemble.json").read_text())
    model, theta0 = from_json(json.dumps(header["model"]))
    cfg = ResampleConfig.from_dict(header["config"])
    shape = tuple(header["shape"])
    raw = (out / header["thetas_file"]).read_bytes()
    thetas = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    counters = []
    with open(out / header["counters_file"], newline="") as fh:
        for row in csv.DictReader(fh):
            counters.append(
                {
                    "chain_index": int(row["chain_index"]),
                    "n_clipped": int(row["n_clipped"]),
                    "n_nan_replaced": int(row["n_nan_replaced"]),
                    "displacement_sq": float(row["displacement_sq"]),
                }
            )
    return model, theta0, cfg, thetas, counters
