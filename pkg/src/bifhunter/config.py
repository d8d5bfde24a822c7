"""Experiment configuration files: loading, schema validation and resolution.

A config is a JSON document validated against the shipped
``experiment.schema.json``; it resolves to a :class:`~bifhunter.bo.BOConfig`
plus the plumbing around it (ensemble seeds, reference value, output
directory, comparison sizes).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional

import jsonschema

from .bo import BOConfig
from .exceptions import ConfigError
from .systems import make_system

SEED_OVERRIDE_ENV = "BIFHUNTER_SEED_OVERRIDE"

# config keys -> BOConfig fields
_ACQ_FIELDS = {"method": "acq_method", "beta": "beta", "grid_points": "grid_points",
               "refine": "refine", "golden_iters": "golden_iters", "mc_samples": "mc_samples",
               "mc_realization": "mc_realization", "map_offset": "map_offset"}
_GP_FIELDS = {"restarts": "gp_restarts", "max_iter": "gp_max_iter", "warm_start": "gp_warm_start"}
_TOP_FIELDS = ("n_initial", "budget", "conv_tol", "noise_sigma", "seed", "initial_design",
               "realization_sampling", "min_iterations")


def _configs_dir():
    return resources.files("bifhunter") / "configs"


def load_schema(name="experiment"):
    return json.loads((_configs_dir() / f"{name}.schema.json").read_text())


def shipped_configs():
    """Names of the experiment configs shipped with the package."""
    return sorted(p.name[:-5] for p in _configs_dir().iterdir()
                  if p.name.endswith(".json") and not p.name.endswith(".schema.json"))


def resolve_config_path(path):
    """``path`` itself if it exists, else the shipped config of that name."""
    p = Path(path)
    if p.is_file():
        return p
    name = p.name[:-5] if p.name.endswith(".json") else p.name
    if p.parent == Path(".") and name in shipped_configs():
        return Path(str(_configs_dir() / f"{name}.json"))
    raise ConfigError(f"config file not found: {path}")


@dataclass
class Reference:
    p_ref: float
    x_ref: Optional[List[float]] = None
    provenance: str = ""

    def to_dict(self):
        out = {"p_ref": self.p_ref}
        if self.x_ref is not None:
            out["x_ref"] = list(self.x_ref)
        if self.provenance:
            out["provenance"] = self.provenance
        return out


@dataclass
class ExperimentConfig:
    """A validated experiment: the BO settings plus output plumbing."""

    name: str
    bo: BOConfig
    seeds: List[int]
    output_dir: Path
    raw: dict = field(repr=False)
    reference: Optional[Reference] = None
    comparison: Optional[List[int]] = None
    report_bifurcation_diagram: bool = False
    seed_override: Optional[int] = None

    @property
    def is_ensemble(self):
        return len(self.seeds) > 1

    def resolved(self):
        """JSON-ready view of the resolved settings (for ``--dry-run``)."""
        b = self.bo
        out = dict(self.raw)
        out["seeds"] = list(self.seeds)
        out["seed_override"] = self.seed_override
        out["output_dir"] = str(self.output_dir)
        out["resolved"] = {
            "system": {"id": b.system.id, "fixed_params": dict(b.system.fixed_params),
                       "bif_param_name": b.system.bif_param_name,
                       "bif_param_range": list(b.system.bif_param_range),
                       "state_box": [list(iv) for iv in b.system.state_box],
                       "branch_variable": b.system.branch_variable},
            "control": b.control,
            **{k: getattr(b, k) for k in ("n_initial", "budget", "conv_tol", "noise_sigma",
                                          "realization_sampling", "min_iterations", "beta",
                                          "grid_points", "refine", "golden_iters", "acq_method",
                                          "mc_samples", "mc_realization", "map_offset",
                                          "gp_restarts", "gp_max_iter", "gp_warm_start")},
        }
        return out


def _seed_override(env):
    value = env.get(SEED_OVERRIDE_ENV)
    if value is None or value == "":
        return None
    try:
        seed = int(value)
    except ValueError:
        raise ConfigError(f"{SEED_OVERRIDE_ENV} must be an integer, got {value!r}") from None
    if seed < 0:
        raise ConfigError(f"{SEED_OVERRIDE_ENV} must be non-negative")
    return seed


def parse_config(data: dict, env=None, output_dir=None) -> ExperimentConfig:
    """Validate a config document and resolve it.

    Parameters
    ----------
    env : mapping, optional
        Environment used for ``BIFHUNTER_SEED_OVERRIDE`` (defaults to ``os.environ``).
    output_dir : path, optional
        Replaces the configured output directory.

    Raises
    ------
    ConfigError
        On schema violations or inconsistent settings.
    """
    try:
        jsonschema.validate(data, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    env = os.environ if env is None else env
    sysd = data["system"]
    kwargs = {k: sysd[k] for k in ("fixed_params", "bif_param_range", "state_box") if k in sysd}
    if "branch_variable" in sysd:
        kwargs["branch_variable"] = sysd["branch_variable"]
    ref = None
    if "reference" in data:
        r = data["reference"]
        ref = Reference(float(r["p_ref"]), r.get("x_ref"), r.get("provenance", ""))
    bo_kwargs = {k: data[k] for k in _TOP_FIELDS if k in data}
    bo_kwargs.update({_ACQ_FIELDS[k]: v for k, v in data.get("acquisition", {}).items()})
    bo_kwargs.update({_GP_FIELDS[k]: v for k, v in data.get("gp", {}).items()})
    override = _seed_override(env)
    try:
        system = make_system(sysd["id"], **kwargs)
        bo = BOConfig(system=system, bif_kind=data["bif_kind"],
                      p_ref=ref.p_ref if ref else None, **bo_kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    ens = data.get("ensemble", {})
    if "seeds" in ens:
        seeds = [int(s) for s in ens["seeds"]]
        if "n_runs" in ens and ens["n_runs"] != len(seeds):
            raise ConfigError("ensemble.n_runs must equal the number of ensemble.seeds")
    else:
        seeds = [bo.seed + k for k in range(ens.get("n_runs", 1))]
    if override is not None:
        seeds = [override + k for k in range(len(seeds))]
    bo = replace(bo, seed=seeds[0])
    if ref is not None and ref.x_ref is not None and len(ref.x_ref) != system.state_dim:
        raise ConfigError("reference.x_ref needs one entry per state component")
    comparison = data.get("comparison")
    if comparison is not None:
        comparison = [int(c) for c in comparison]
    return ExperimentConfig(
        name=data["name"], bo=bo, seeds=seeds,
        output_dir=Path(output_dir if output_dir is not None else data["output_dir"]),
        raw=data, reference=ref, comparison=comparison,
        report_bifurcation_diagram=bool(data.get("report_bifurcation_diagram", False)),
        seed_override=override)


def load_config(path, env=None, output_dir=None) -> ExperimentConfig:
    """Read, validate and resolve the config at ``path`` (or a shipped config name)."""
    p = resolve_config_path(path)
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data, env=env, output_dir=output_dir)
