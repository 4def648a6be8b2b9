"""Experiment configuration, config hashing, and run manifests.

Configs are JSON files validated against the documented schema (see
README). Command-line flags override file values, which override defaults.
All randomness in a run flows from the per-run root seed through named
purposes (sampling, init, augmentation, probing), so every stage is
independently reproducible.
"""

from __future__ import annotations

import json
import platform
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from .augment import simclr_chain
from .encoder import EncoderSpec
from .errors import ConfigError
from .longtail import LongTailSpec
from .trainer import TrainConfig
from .util import sha256_hex, stable_json

VARIANTS = ("sdclr", "simclr", "dropout")

DEFAULTS = {
    "dataset": {
        "source": "synthetic",
        "root": None,
        "n_classes": 10,
        "image_size": 32,
        "train_per_class": 600,
        "test_per_class": 100,
        "data_seed": 0,
    },
    "longtail": {
        "profile": "exponential",
        "max_count": 500,
        "imbalance_factor": 100.0,
        "min_count": 5,
        "alpha": 6.0,
    },
    "val_size": 200,
    "groups": {"scheme": "thirds", "thresholds": [100, 20]},
    "model": {
        "arch": "small4",
        "channels": [16, 32, 64, 128],
        "proj_hidden": 128,
        "proj_dim": 64,
    },
    "train": {
        "epochs": 60,
        "batch_size": 256,
        "lr": 0.5,
        "momentum": 0.9,
        "schedule": "cosine",
        "tau": 0.5,
        "prune_ratio": 0.9,
        "prune_scope": "global",
        "refresh_every": 1,
        "prune_projection_head": False,
        "dtype": "float32",
    },
    "augment": {
        "crop_scale": [0.2, 1.0],
        "jitter": [0.4, 0.4, 0.4, 0.1],
        "p_jitter": 0.8,
        "p_flip": 0.5,
        "p_gray": 0.2,
    },
    "probe": {"batch_size": 256, "few_shot_fraction": 0.01},
    "pie": {"top_fraction": 0.01, "feature_source": "backbone"},
    "seeds": [0, 1, 2],
    "out_dir": "runs/default",
}


def _merge(base, override, path=""):
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"{path}{key}", "unknown field")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULTS)))

    def __post_init__(self):
        self.validate()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_file(cls, path):
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        return cls.from_dict(user)

    @classmethod
    def from_dict(cls, user):
        return cls(raw=_merge(DEFAULTS, user))

    def with_overrides(self, **kv):
        """Flag-level overrides (flag > file > default)."""
        raw = json.loads(json.dumps(self.raw))
        for key, val in kv.items():
            if val is None:
                continue
            if key == "seed":
                raw["seeds"] = [int(val)]
            elif key == "prune_ratio":
                raw["train"]["prune_ratio"] = float(val)
            elif key == "epochs":
                raw["train"]["epochs"] = int(val)
            elif key == "out":
                raw["out_dir"] = str(val)
            else:
                raise ConfigError(key, "unknown override")
        return ExperimentConfig(raw=raw)

    # -- validation --------------------------------------------------------

    def validate(self):
        r = self.raw
        lt = r["longtail"]
        if lt["profile"] not in ("exponential", "pareto"):
            raise ConfigError("longtail.profile", "must be 'exponential' or 'pareto'")
        if lt["profile"] == "exponential" and lt["imbalance_factor"] < 1:
            raise ConfigError("longtail.imbalance_factor", "must be >= 1")
        if lt["profile"] == "pareto" and lt["min_count"] >= lt["max_count"]:
            raise ConfigError("longtail.min_count", "must be < longtail.max_count")
        if lt["max_count"] < 1:
            raise ConfigError("longtail.max_count", "must be >= 1")
        tr = r["train"]
        if not (0.0 <= tr["prune_ratio"] < 1.0):
            raise ConfigError("train.prune_ratio", "must be in [0, 1)")
        if tr["epochs"] < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if tr["refresh_every"] < 1:
            raise ConfigError("train.refresh_every", "must be >= 1")
        if tr["tau"] <= 0:
            raise ConfigError("train.tau", "must be > 0")
        if not r["seeds"]:
            raise ConfigError("seeds", "must list at least one seed")
        if r["groups"]["scheme"] not in ("thirds", "thresholds"):
            raise ConfigError("groups.scheme", "must be 'thirds' or 'thresholds'")
        if not (0 < r["pie"]["top_fraction"] <= 1):
            raise ConfigError("pie.top_fraction", "must be in (0, 1]")
        if not (0 < r["probe"]["few_shot_fraction"] <= 1):
            raise ConfigError("probe.few_shot_fraction", "must be in (0, 1]")

    # -- derived objects ---------------------------------------------------

    @property
    def config_hash(self):
        return sha256_hex(stable_json(self.raw).encode())[:16]

    @property
    def seeds(self):
        return list(self.raw["seeds"])

    @property
    def out_dir(self):
        return Path(self.raw["out_dir"])

    def longtail_spec(self, seed):
        lt = self.raw["longtail"]
        kind = "exponential" if lt["profile"] == "exponential" else "pareto"
        return LongTailSpec(
            profile_kind=kind,
            n_classes=self.raw["dataset"]["n_classes"],
            max_count=lt["max_count"],
            imbalance_factor=lt.get("imbalance_factor"),
            min_count=lt.get("min_count"),
            alpha=lt.get("alpha", 6.0),
            seed=seed,
        )

    def encoder_spec(self):
        m = self.raw["model"]
        return EncoderSpec(
            arch=m["arch"],
            image_size=self.raw["dataset"]["image_size"],
            channels=tuple(m["channels"]),
            proj_hidden=m["proj_hidden"],
            proj_dim=m["proj_dim"],
        )

    def train_config(self, variant, seed):
        if variant not in VARIANTS:
            raise ConfigError("variant", f"must be one of {VARIANTS}")
        tr = self.raw["train"]
        competitor = {"sdclr": "magnitude", "simclr": "none", "dropout": "dropout"}[variant]
        return TrainConfig(
            epochs=tr["epochs"], batch_size=tr["batch_size"], lr=tr["lr"],
            momentum=tr["momentum"], schedule=tr["schedule"], tau=tr["tau"],
            prune_ratio=tr["prune_ratio"], prune_scope=tr["prune_scope"],
            refresh_every=tr["refresh_every"], seed=seed,
            competitor=competitor,
            unified_norm=(variant == "simclr"),
            prune_projection_head=tr["prune_projection_head"],
            dtype=tr["dtype"],
        )

    def augment_chain(self):
        a = self.raw["augment"]
        return simclr_chain(
            crop_scale=tuple(a["crop_scale"]), jitter=tuple(a["jitter"]),
            p_jitter=a["p_jitter"], p_flip=a["p_flip"], p_gray=a["p_gray"],
        )

    def to_json(self):
        return json.dumps(self.raw, sort_keys=True, indent=1)


def _source_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or None
    except Exception:  # noqa: BLE001 - best effort only
        return None


@dataclass
class RunManifest:
    config_hash: str
    source_rev: str | None = None
    created: str = ""
    updated: str = ""
    platform_note: str = ""
    artifacts: list = field(default_factory=list)

    @classmethod
    def open(cls, out_dir, config_hash):
        path = Path(out_dir) / "manifest.json"
        if path.exists():
            d = json.loads(path.read_text())
            m = cls(**d)
            if m.config_hash != config_hash:
                m.config_hash = config_hash
            return m
        import numpy as np
        return cls(
            config_hash=config_hash,
            source_rev=_source_revision(),
            created=time.strftime("%Y-%m-%dT%H:%M:%S"),
            platform_note=f"python {platform.python_version()}, "
                          f"numpy {np.__version__}, {platform.system()}",
        )

    def add(self, out_dir, path):
        rel = str(Path(path).resolve().relative_to(Path(out_dir).resolve()))
        if rel not in self.artifacts:
            self.artifacts.append(rel)

    def write(self, out_dir):
        self.updated = time.strftime("%Y-%m-%dT%H:%M:%S")
        payload = {
            "config_hash": self.config_hash,
            "source_rev": self.source_rev,
            "created": self.created,
            "updated": self.updated,
            "platform_note": self.platform_note,
            "artifacts": sorted(set(self.artifacts)),
        }
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "manifest.json").write_text(
            json.dumps(payload, sort_keys=True, indent=1)
        )
