"""Built-in coefficient catalog and the JSON problem format.

Problems are declared as data, not code: a JSON document selects drift,
diffusion and (optionally) an observable by name with a parameter map, e.g.

    {"d": 1, "k": 1, "x0": [0.5], "horizon": 1.0, "theta": 0.5,
     "drift": {"name": "sqrt_abs", "scale": 1.0},
     "diffusion": {"name": "sin_modulated", "base": 1.0, "amp": 0.3}}

The catalog is intentionally small; each entry is total on R^d and
vectorized.  `rough_problem()` is the irregular-drift testbed used across
the verification suite, `linear_problem()` the closed-form oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .model import FunctionalG, SdeProblem, VectorField

__all__ = [
    "make_drift",
    "make_diffusion",
    "make_functional",
    "problem_from_config",
    "linear_problem",
    "rough_problem",
    "brownian_problem",
]


def _params(spec: dict, allowed: dict) -> dict:
    """Merge a parameter map with defaults, rejecting unknown keys."""
    extra = set(spec) - set(allowed) - {"name"}
    if extra:
        raise ConfigError(f"unknown parameters {sorted(extra)} for field '{spec.get('name')}'")
    out = dict(allowed)
    out.update({k: float(v) for k, v in spec.items() if k != "name"})
    return out


def make_drift(spec: dict, d: int) -> VectorField:
    name = spec.get("name")
    if name == "zero":
        _params(spec, {})
        return VectorField(d, (d,), lambda x: np.zeros_like(x), "drift:zero")
    if name == "constant":
        p = _params(spec, {"value": 1.0})
        return VectorField(d, (d,), lambda x: np.full_like(x, p["value"]), "drift:constant")
    if name == "linear":
        p = _params(spec, {"beta": 1.0})
        return VectorField(d, (d,), lambda x: p["beta"] * x, "drift:linear")
    if name == "sqrt_abs":
        # |x|^{1/2} componentwise: theta = 1/2 Holder, unbounded, kink at 0
        p = _params(spec, {"scale": 1.0})
        return VectorField(d, (d,), lambda x: p["scale"] * np.sqrt(np.abs(x)), "drift:sqrt_abs")
    if name == "sin":
        p = _params(spec, {"scale": 1.0, "freq": 1.0})
        return VectorField(
            d, (d,), lambda x: p["scale"] * np.sin(p["freq"] * x), "drift:sin"
        )
    raise ConfigError(f"unknown drift '{name}'")


def make_diffusion(spec: dict, d: int, k: int) -> VectorField:
    name = spec.get("name")
    eye = np.eye(d, k)

    if name == "constant":
        p = _params(spec, {"value": 1.0})

        def fn(x, v=p["value"]):
            return np.broadcast_to(v * eye, (x.shape[0], d, k)).copy()

        return VectorField(d, (d, k), fn, "diffusion:constant")
    if name == "sin_modulated":
        # sigma(x) = base + amp*sin(freq*x) on the matching diagonal entry
        p = _params(spec, {"base": 1.0, "amp": 0.3, "freq": 1.0})

        def fn(x):
            out = np.zeros((x.shape[0], d, k))
            m = min(d, k)
            diag = p["base"] + p["amp"] * np.sin(p["freq"] * x[:, :m])
            out[:, np.arange(m), np.arange(m)] = diag
            return out

        return VectorField(d, (d, k), fn, "diffusion:sin_modulated")
    if name == "linear":
        # sigma(x) = scale*x on the diagonal: degenerate at 0, fails the
        # bounded-inverse audit there by design
        p = _params(spec, {"scale": 1.0})

        def fn(x):
            out = np.zeros((x.shape[0], d, k))
            m = min(d, k)
            out[:, np.arange(m), np.arange(m)] = p["scale"] * x[:, :m]
            return out

        return VectorField(d, (d, k), fn, "diffusion:linear")
    raise ConfigError(f"unknown diffusion '{name}'")


def make_functional(spec: dict) -> FunctionalG:
    name = spec.get("name")
    if name == "identity":
        _params(spec, {})
        return FunctionalG(lambda t, x: x, lambda t, x: np.ones_like(x), 1.0, "G:identity")
    if name == "scale":
        p = _params(spec, {"a": 1.0})
        a = p["a"]
        return FunctionalG(
            lambda t, x: a * x, lambda t, x: np.full_like(x, a), abs(a), "G:scale"
        )
    if name == "sin_shift":
        # G(t, x) = x + amp*sin(x): |G'| >= 1 - amp when amp < 1
        p = _params(spec, {"amp": 0.5})
        amp = p["amp"]
        return FunctionalG(
            lambda t, x: x + amp * np.sin(x),
            lambda t, x: 1.0 + amp * np.cos(x),
            max(1.0 - abs(amp), 0.0),
            "G:sin_shift",
        )
    raise ConfigError(f"unknown functional '{name}'")


def problem_from_config(cfg: dict) -> SdeProblem:
    """Build an SdeProblem from its JSON-style declaration."""
    try:
        d = int(cfg["d"])
        k = int(cfg["k"])
        x0 = np.asarray(cfg["x0"], dtype=float)
        horizon = float(cfg["horizon"])
    except KeyError as e:
        raise ConfigError(f"problem config missing key {e}") from e
    theta = float(cfg.get("theta", 0.5))
    drift = make_drift(cfg.get("drift", {"name": "zero"}), d)
    diffusion = make_diffusion(cfg.get("diffusion", {"name": "constant"}), d, k)
    return SdeProblem(
        d, k, drift, diffusion, x0, horizon, theta, label=str(cfg.get("label", "problem"))
    )


def linear_problem(beta: float = 1.0, s: float = 1.0, x0: float = 0.0,
                   horizon: float = 1.0) -> SdeProblem:
    """b(x) = beta*x, sigma = s: every transformed object has a closed form."""
    return problem_from_config({
        "d": 1, "k": 1, "x0": [x0], "horizon": horizon, "theta": 0.5,
        "drift": {"name": "linear", "beta": beta},
        "diffusion": {"name": "constant", "value": s},
        "label": f"linear(beta={beta:g},s={s:g})",
    })


def rough_problem(x0: float = 0.5, horizon: float = 1.0) -> SdeProblem:
    """The irregular-drift testbed: b = |x|^{1/2}, sigma = 1 + 0.3 sin x."""
    return problem_from_config({
        "d": 1, "k": 1, "x0": [x0], "horizon": horizon, "theta": 0.5,
        "drift": {"name": "sqrt_abs", "scale": 1.0},
        "diffusion": {"name": "sin_modulated", "base": 1.0, "amp": 0.3, "freq": 1.0},
        "label": "rough",
    })


def brownian_problem(x0: float = 0.0, horizon: float = 1.0) -> SdeProblem:
    """Zero drift, unit diffusion: the transform degenerates to the identity."""
    return problem_from_config({
        "d": 1, "k": 1, "x0": [x0], "horizon": horizon, "theta": 0.5,
        "drift": {"name": "zero"},
        "diffusion": {"name": "constant", "value": 1.0},
        "label": "brownian",
    })
