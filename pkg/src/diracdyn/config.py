"""Run configuration: JSON loading, schema validation, model construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import List, Optional

import jsonschema
import numpy as np

from .dynamics import IntegratorSpec, RhsKind
from .models import ChainSpec, PairPotential, initial_state
from .rng import stream


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field (``masses``, ``initial.seed``...)."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config.schema.json").read_text())


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [p for p in err.validator_value if p not in err.instance]
        if missing:
            parts.append(missing[0])
    elif err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        if extra:
            parts.append(extra[0])
    return ".".join(parts) or "<root>"


def validate(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(_error_path(err), err.message)


@dataclass
class RunConfig:
    spec: ChainSpec
    x0: np.ndarray
    kinds: List[RhsKind]
    integrator: IntegratorSpec
    seed: int = 0
    raw: dict = field(default_factory=dict)


def spec_from_doc(doc: dict) -> ChainSpec:
    pinned = doc["model"] == "pendulum"
    N = int(doc["N"])
    K = N if pinned else N - 1
    if not pinned and N < 2:
        raise ConfigError("N", "a free chain needs at least 2 particles")
    for key, count in (("masses", N), ("lengths", K), ("friction", N)):
        if key in doc and len(doc[key]) not in (1, count):
            raise ConfigError(key, f"expected {count} values, got {len(doc[key])}")
    pp = doc.get("pair_potential")
    pair = None
    if pp is not None:
        if len(pp["charges"]) != N:
            raise ConfigError("pair_potential.charges", f"expected {N} values")
        sigma = pp.get("sigma", 1.0)
        if isinstance(sigma, list) and np.shape(sigma) != (N, N):
            raise ConfigError("pair_potential.sigma", f"expected a {N}x{N} array")
        pair = PairPotential(pp["charges"], pp.get("epsilon", 0.0), sigma, pp.get("prefactor", 1.0))
    return ChainSpec(N=N, d=int(doc["d"]), masses=doc["masses"], lengths=doc["lengths"],
                     friction=doc.get("friction"), gravity=float(doc.get("gravity", 0.0)),
                     pair_potential=pair, pinned=pinned)


def state_from_doc(spec: ChainSpec, doc: dict, seed: int) -> np.ndarray:
    init = doc.get("initial", {})
    for key in ("positions", "velocities"):
        if key in init and np.shape(init[key]) != (spec.N, spec.d):
            raise ConfigError(f"initial.{key}", f"expected {spec.N} rows of {spec.d} numbers")
    return initial_state(spec, init.get("positions"), init.get("velocities"),
                         rng=stream(seed), speed=float(init.get("speed", 1.0)))


def build(doc: dict, kinds: Optional[List[str]] = None, dt: Optional[float] = None,
          t_end: Optional[float] = None, seed: Optional[int] = None) -> RunConfig:
    """Validate ``doc`` and apply command-line overrides."""
    validate(doc)
    spec = spec_from_doc(doc)
    # command line, then initial.seed, then the top-level seed
    if seed is None:
        seed = doc.get("initial", {}).get("seed", doc.get("seed", 0))
    seed = int(seed)
    integ = dict(doc.get("integrator", {}))
    if dt is not None:
        integ["dt"] = dt
    if t_end is not None:
        integ["t_end"] = t_end
    try:
        integrator = IntegratorSpec(**integ)
    except ValueError as exc:
        raise ConfigError("integrator", str(exc)) from None
    names = kinds or doc.get("kinds") or [k.value for k in RhsKind]
    try:
        rhs_kinds = [RhsKind(k) for k in names]
    except ValueError as exc:
        raise ConfigError("kinds", str(exc)) from None
    return RunConfig(spec, state_from_doc(spec, doc, seed), rhs_kinds, integrator, seed, doc)


def load(path, **overrides) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
    return build(doc, **overrides)
