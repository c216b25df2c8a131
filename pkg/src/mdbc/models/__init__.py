"""Differentiable density models: log-density, score, sampling, fitting.

A model is a :class:`Model` handle (family tag + shape spec); parameters
travel separately as flat float64 vectors, so resampling chains can update
them without touching the handle. Concrete math lives in
:mod:`mdbc.models.gmm` and :mod:`mdbc.models.coupling`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, InputError
from . import coupling, gmm
from .coupling import CouplingFlowSpec, FlowFitResult
from .gmm import FitResult, GmmSpec

__all__ = [
    "Model",
    "GmmSpec",
    "CouplingFlowSpec",
    "FitResult",
    "FlowFitResult",
    "gaussian_mixture",
    "coupling_flow",
    "log_density",
    "log_density_batch",
    "score",
    "score_batch",
    "sample",
    "sample_batch",
    "sample_from_variates",
    "variates_per_draw",
    "fit_mle",
    "to_json",
    "from_json",
]


@dataclass(frozen=True)
class Model:
    """Handle for a differentiable density family; base measure is N(0, I_p)."""

    family: str
    spec: GmmSpec | CouplingFlowSpec

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def dim(self) -> int:
        return self.spec.dim


def gaussian_mixture(n_components: int, dim: int) -> Model:
    return Model("gmm", GmmSpec(n_components=n_components, dim=dim))


def coupling_flow(dim: int, n_layers: int = 4, hidden: int = 16, scale_cap: float = 3.0) -> Model:
    return Model(
        "coupling_flow",
        CouplingFlowSpec(dim=dim, n_layers=n_layers, hidden=hidden, scale_cap=scale_cap),
    )


def _mod(model: Model):
    if model.family == "gmm":
        return gmm
    if model.family == "coupling_flow":
        return coupling
    raise InputError(f"unknown model family {model.family!r}")


def log_density(model: Model, theta, x) -> float:
    """log f_theta(x) at a single point."""
    return _mod(model).log_density_point(model.spec, theta, x)


def log_density_batch(model: Model, theta, xs) -> np.ndarray:
    return _mod(model).log_density_batch(model.spec, theta, xs)


def score(model: Model, theta, x) -> np.ndarray:
    """Gradient of log f_theta(x) with respect to theta."""
    return _mod(model).score_point(model.spec, theta, x)


def score_batch(model: Model, theta, xs) -> np.ndarray:
    """(n, d) score matrix; vectorized when the family supports it."""
    if model.family == "coupling_flow":
        return coupling.score_batch(model.spec, theta, xs)
    xs = np.asarray(xs, dtype=np.float64)
    return np.array([gmm.score_point(model.spec, theta, x) for x in xs])


def sample(model: Model, theta, rng: np.random.Generator) -> np.ndarray:
    """One draw from f_theta; deterministic given the generator state."""
    return _mod(model).sample(model.spec, theta, rng)


def sample_batch(model: Model, theta, n: int, rng: np.random.Generator):
    """(points, labels) where labels is None for families without components."""
    return _mod(model).sample_batch(model.spec, theta, n, rng)


def variates_per_draw(model: Model) -> tuple[int, int]:
    """(uniforms, normals) consumed per draw; fixed per family."""
    if model.family == "gmm":
        return 1, model.dim
    return 0, model.dim


def sample_from_variates(model: Model, theta, u, z) -> np.ndarray:
    """Deterministic map from pre-drawn variates to one sample."""
    return _mod(model).sample_from_variates(model.spec, theta, u, z)


def fit_mle(model: Model, xs, seed: int = 0, **opts):
    """Maximum-likelihood fit; EM for mixtures, Adam ascent for flows."""
    return _mod(model).fit_mle(model.spec, xs, seed=seed, **opts)


# ---------------------------------------------------------------------------
# Serialization: JSON round-trips must be bit-exact for float64 theta
# ---------------------------------------------------------------------------


def _spec_dict(model: Model) -> dict:
    if model.family == "gmm":
        return {"n_components": model.spec.n_components, "dim": model.spec.dim}
    return {
        "dim": model.spec.dim,
        "n_layers": model.spec.n_layers,
        "hidden": model.spec.hidden,
        "scale_cap": model.spec.scale_cap,
    }


def model_from_spec_dict(family: str, spec: dict) -> Model:
    if family == "gmm":
        return gaussian_mixture(spec["n_components"], spec["dim"])
    if family == "coupling_flow":
        return coupling_flow(
            spec["dim"],
            n_layers=spec.get("n_layers", 4),
            hidden=spec.get("hidden", 16),
            scale_cap=spec.get("scale_cap", 3.0),
        )
    raise InputError(f"unknown model family {family!r}")


def to_json(model: Model, theta=None) -> str:
    """Serialize model (and optionally theta) to JSON.

    Python's repr-based float formatting round-trips float64 exactly, so
    the document reloads bit-identically.
    """
    doc = {"family": model.family, "spec": _spec_dict(model)}
    if theta is not None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (model.n_params,):
            raise ContractViolation("theta length does not match model spec")
        doc["theta"] = theta.tolist()
    return json.dumps(doc)


def from_json(text: str):
    """Inverse of :func:`to_json`; returns (model, theta-or-None)."""
    doc = json.loads(text)
    model = model_from_spec_dict(doc["family"], doc["spec"])
    theta = None
    if "theta" in doc and doc["theta"] is not None:
        theta = np.asarray(doc["theta"], dtype=np.float64)
        if theta.shape != (model.n_params,):
            raise ContractViolation("serialized theta length does not match spec")
    return model, theta
