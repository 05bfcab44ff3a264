"""Experiment configuration and task-set construction.

An experiment file is YAML holding one `ExperimentConfig`: problem
family, pre-train set size |S1| and fine-tune set size |S2| with their
distribution variant, the decoder topology, training settings, seeds,
and the run directory.  The schema is validated before any compute and
unknown keys are rejected at every nesting level.

Sampling is stream-split: the sampling seed spawns independent child
streams for S1, S2, and the transfer-source choice, so enlarging one
set never reshuffles another.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import jsonschema
import numpy as np
import yaml

from .network import NetworkConfig
from .problems import (
    BURGERS_U0_EXTRAPOLATION_SPEC,
    BURGERS_U0_SPEC,
    CIRCLE_BOUNDARY_SPEC,
    ProblemInstance,
    burgers_instance,
    ellipse_instance,
    grf_sample,
    laplace_instance,
    ode_eta_grid,
    ode_instance,
    polygon_sample,
)

FAMILIES = ("ode", "burgers", "laplace")
VARIANTS = ("in-distribution", "heterogeneous-nu", "extrapolation-grf", "ellipse")

_NETWORK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["spatial_dim", "latent_dim"],
    "properties": {
        "spatial_dim": {"type": "integer", "minimum": 1},
        "latent_dim": {"type": "integer", "minimum": 0},
        "depth": {"type": "integer", "minimum": 2},
        "width": {"type": "integer", "minimum": 1},
        "output_dim": {"type": "integer", "minimum": 1},
        "activation": {"type": "string"},
        "omega0": {"type": "number", "exclusiveMinimum": 0},
        "insert_latent_at": {"type": ["integer", "null"], "minimum": 1},
        "periodic_embedding": {
            "type": ["array", "null"],
            "prefixItems": [{"type": "integer", "minimum": 0},
                            {"type": "number", "exclusiveMinimum": 0}],
            "minItems": 2,
            "maxItems": 2,
        },
    },
}

_TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "iterations": {"type": "integer", "minimum": 0},
        "m_r": {"type": "integer", "minimum": 1},
        "m_bc": {"type": "integer", "minimum": 1},
        "lam_bc": {"type": "number", "exclusiveMinimum": 0},
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "p": {"type": "number", "minimum": 1},
        "lr0": {"type": "number", "exclusiveMinimum": 0},
        "milestones": {"type": "array",
                       "items": {"type": "number",
                                 "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "mode": {"enum": ["mad-l", "mad-lm"]},
        "alpha_z": {"type": ["number", "null"], "minimum": 0},
        "z_init_std": {"type": "number", "minimum": 0},
        "eval_every": {"type": "integer", "minimum": 1},
        "penalty_in_finetune": {"type": "boolean"},
        "source_iterations": {"type": ["integer", "null"], "minimum": 0},
        "reptile_inner_steps": {"type": "integer", "minimum": 1},
        "reptile_epsilon": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "s1", "s2", "network", "train", "out"],
    "properties": {
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(FAMILIES)},
                "eta_count": {"type": "integer", "minimum": 2},
                "eta_lo": {"type": "number"},
                "eta_hi": {"type": "number"},
                "nu": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "variant": {"enum": list(VARIANTS)},
        "s1": {"type": "integer", "minimum": 1},
        "s2": {"type": "integer", "minimum": 0},
        "network": _NETWORK_SCHEMA,
        "train": _TRAIN_SCHEMA,
        "finetune": _TRAIN_SCHEMA,
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sampling": {"type": "integer", "minimum": 0},
                "training": {"type": "integer", "minimum": 0},
                "finetune": {"type": "integer", "minimum": 0},
            },
        },
        "out": {"type": "string", "minLength": 1},
    },
}


class ConfigError(Exception):
    """Raised for schema violations and cross-field inconsistencies."""


@dataclass(frozen=True)
class ExperimentConfig:
    family: dict
    s1: int
    s2: int
    network: NetworkConfig
    train: dict
    finetune: dict
    out: str
    variant: str = "in-distribution"
    sampling_seed: int = 0
    training_seed: int = 0
    finetune_seed: int = 1000
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def kind(self) -> str:
        return self.family["kind"]

    def train_config(self, **overrides):
        from .training import TrainConfig
        merged = {"network": self.network, "seed": self.training_seed,
                  **self.train, **overrides}
        if "milestones" in merged:
            merged["milestones"] = tuple(merged["milestones"])
        return TrainConfig(**merged)

    def finetune_config(self, **overrides):
        """Fine-tune settings: the train section with the finetune
        section layered on top, seeded from the finetune stream."""
        from .training import TrainConfig
        merged = {"network": self.network, "seed": self.finetune_seed,
                  **self.train, **self.finetune, **overrides}
        if "milestones" in merged:
            merged["milestones"] = tuple(merged["milestones"])
        return TrainConfig(**merged)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a raw mapping and build the typed config."""
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a mapping")
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc

    family = dict(data["family"])
    kind = family["kind"]
    variant = data.get("variant", "in-distribution")
    if kind == "ode":
        family.setdefault("eta_count", 20)
        family.setdefault("eta_lo", 0.0)
        family.setdefault("eta_hi", 2.0)
        if not family["eta_hi"] > family["eta_lo"]:
            raise ConfigError("family: eta_hi must exceed eta_lo")
        if data["s1"] + data["s2"] > family["eta_count"]:
            raise ConfigError("family: s1 + s2 exceeds the eta grid size")
        bad = {k for k in family if k not in
               ("kind", "eta_count", "eta_lo", "eta_hi")}
    elif kind == "burgers":
        family.setdefault("nu", 0.01)
        bad = {k for k in family if k not in ("kind", "nu")}
    else:
        bad = {k for k in family if k != "kind"}
    if bad:
        raise ConfigError(
            f"family: keys {sorted(bad)} do not apply to kind {kind!r}")

    allowed_variants = {
        "ode": {"in-distribution"},
        "burgers": {"in-distribution", "heterogeneous-nu", "extrapolation-grf"},
        "laplace": {"in-distribution", "ellipse"},
    }[kind]
    if variant not in allowed_variants:
        raise ConfigError(f"variant {variant!r} does not apply to {kind!r}")

    try:
        network = NetworkConfig.from_dict({
            "periodic_embedding": None, "insert_latent_at": None,
            **data["network"]})
    except Exception as exc:
        raise ConfigError(f"network: {exc}") from exc

    seeds = data.get("seeds", {})
    cfg = ExperimentConfig(
        family=family,
        s1=data["s1"],
        s2=data["s2"],
        network=network,
        train=dict(data["train"]),
        finetune=dict(data.get("finetune", {})),
        out=data["out"],
        variant=variant,
        sampling_seed=seeds.get("sampling", 0),
        training_seed=seeds.get("training", 0),
        finetune_seed=seeds.get("finetune", 1000),
        raw=data,
    )
    cfg.train_config()
    cfg.finetune_config()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(data)


def _sampling_streams(config: ExperimentConfig):
    s1_ss, s2_ss, src_ss = np.random.SeedSequence(
        config.sampling_seed).spawn(3)
    return s1_ss, s2_ss, src_ss


def _ode_split(config: ExperimentConfig):
    """Grid etas; the S2 stream picks the held-out indices so the same
    sampling seed keeps S1 stable while s2 grows."""
    fam = config.family
    etas = ode_eta_grid(fam["eta_count"], fam["eta_lo"], fam["eta_hi"])
    _, s2_ss, _ = _sampling_streams(config)
    rng = np.random.default_rng(s2_ss)
    held = sorted(rng.choice(fam["eta_count"], size=config.s2,
                             replace=False).tolist())
    held_set = set(held)
    train_idx = [i for i in range(fam["eta_count"]) if i not in held_set]
    if len(train_idx) > config.s1:
        train_idx = train_idx[:config.s1]
    return etas, train_idx, held


def sample_s1(config: ExperimentConfig) -> list[ProblemInstance]:
    kind = config.kind
    s1_ss, _, _ = _sampling_streams(config)
    rng = np.random.default_rng(s1_ss)
    if kind == "ode":
        etas, train_idx, _ = _ode_split(config)
        return [ode_instance(etas[i]) for i in train_idx]
    if kind == "burgers":
        nu = config.family["nu"]
        return [burgers_instance(grf_sample(BURGERS_U0_SPEC, rng), nu)
                for _ in range(config.s1)]
    return [laplace_instance(polygon_sample(rng),
                             grf_sample(CIRCLE_BOUNDARY_SPEC, rng))
            for _ in range(config.s1)]


def sample_s2(config: ExperimentConfig) -> list[ProblemInstance]:
    kind = config.kind
    variant = config.variant
    _, s2_ss, _ = _sampling_streams(config)
    rng = np.random.default_rng(s2_ss)
    if kind == "ode":
        etas, _, held = _ode_split(config)
        return [ode_instance(etas[i]) for i in held]
    if kind == "burgers":
        out = []
        for _ in range(config.s2):
            if variant == "extrapolation-grf":
                u0 = grf_sample(BURGERS_U0_EXTRAPOLATION_SPEC, rng)
                out.append(burgers_instance(u0, config.family["nu"]))
            elif variant == "heterogeneous-nu":
                u0 = grf_sample(BURGERS_U0_SPEC, rng)
                nu = float(10.0 ** rng.uniform(-3.0, -1.0))
                out.append(burgers_instance(u0, nu, heterogeneous=True))
            else:
                u0 = grf_sample(BURGERS_U0_SPEC, rng)
                out.append(burgers_instance(u0, config.family["nu"]))
        return out
    if variant == "ellipse":
        return [ellipse_instance(rng) for _ in range(config.s2)]
    return [laplace_instance(polygon_sample(rng),
                             grf_sample(CIRCLE_BOUNDARY_SPEC, rng))
            for _ in range(config.s2)]


def transfer_source_indices(config: ExperimentConfig) -> list[int]:
    """One uniformly chosen S1 index per S2 task, from the dedicated
    source stream."""
    _, _, src_ss = _sampling_streams(config)
    rng = np.random.default_rng(src_ss)
    return [int(rng.integers(config.s1)) for _ in range(config.s2)]


def latent_free_network(network: NetworkConfig) -> NetworkConfig:
    """Baseline twin: same topology with the latent input removed."""
    return dataclasses.replace(network, latent_dim=0, insert_latent_at=None)
