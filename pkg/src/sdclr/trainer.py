"""Dual-branch training loop.

One shared weight store drives two branches: the dense branch sees view 1
with its own batch-norm state, and the sparse branch sees view 2 through
the current prune mask with a second, independent batch-norm state. The
mask is recomputed from the live weights at the start of every epoch
(configurable cadence) and held constant in between.

Gradient rules, per step:
  (a) a weight kept by the mask accumulates gradients from both branches;
  (b) a dropped weight receives gradient only through the dense branch
      (the sparse forward used 0 there, so its gradient is masked out);
  (c) each branch's normalization statistics are updated only by that
      branch's forward pass.

All randomness is derived statelessly from (seed, purpose, epoch, ...), so
a checkpoint needs no rng state and any interrupted run resumes exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentationChain, augment, simclr_chain
from .encoder import Encoder, EncoderSpec
from .errors import ContractError, InvalidParameterError, TrainingDiverged
from .losses import EmbeddingBatch, block_pairs, ntxent_loss
from .pruning import PruneMask, all_ones_mask, apply_mask, magnitude_mask, random_dropout_mask
from .util import atomic_write_bytes, atomic_write_text, derive_rng, hash_arrays, stable_json

COMPETITORS = ("magnitude", "dropout", "none")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 256
    lr: float = 0.5
    momentum: float = 0.9
    schedule: str = "cosine"            # cosine | step | const
    step_milestones: tuple = (30, 45)
    step_gamma: float = 0.1
    tau: float = 0.5
    prune_ratio: float = 0.9
    prune_scope: str = "global"
    refresh_every: int = 1              # epochs between mask refreshes
    seed: int = 0
    competitor: str = "magnitude"       # magnitude | dropout | none
    unified_norm: bool = False          # one shared norm state (plain two-view mode)
    prune_projection_head: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.competitor not in COMPETITORS:
            raise InvalidParameterError(f"competitor must be one of {COMPETITORS}")
        if self.refresh_every < 1:
            raise InvalidParameterError("refresh cadence must be >= 1 epoch")
        if self.schedule not in ("cosine", "step", "const"):
            raise InvalidParameterError(f"unknown schedule {self.schedule!r}")
        if not (0.0 <= self.prune_ratio < 1.0):
            raise InvalidParameterError("prune_ratio must be in [0, 1)")
        if self.tau <= 0:
            raise InvalidParameterError("tau must be > 0")

    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self):
        d = dict(self.__dict__)
        d["step_milestones"] = list(self.step_milestones)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "step_milestones" in d:
            d["step_milestones"] = tuple(d["step_milestones"])
        return cls(**d)


@dataclass
class DualBranchModel:
    """Shared weights, one mask, two normalization-state sets."""

    encoder: Encoder
    shared_params: dict                 # backbone weights
    proj_params: dict                   # projection head, shared by both branches
    norm_state_dense: dict
    norm_state_sparse: dict
    mask: PruneMask | None = None
    unified_norm: bool = False

    @property
    def merged_params(self):
        return {**self.shared_params, **self.proj_params}

    def set_merged(self, params):
        for k in self.shared_params:
            self.shared_params[k] = params[k]
        for k in self.proj_params:
            self.proj_params[k] = params[k]

    def check_invariants(self):
        if not self.unified_norm and self.norm_state_dense is self.norm_state_sparse:
            raise ContractError("branch norm states must not be aliased")


def build_model(encoder_spec: EncoderSpec, config: TrainConfig) -> DualBranchModel:
    enc = Encoder(encoder_spec)
    dtype = config.np_dtype()
    params = enc.init_params(derive_rng(config.seed, "init"), dtype=dtype)
    backbone_keys = set(enc.backbone_keys())
    shared = {k: v for k, v in params.items() if k in backbone_keys}
    proj = {k: v for k, v in params.items() if k not in backbone_keys}
    dense_state = enc.init_norm_state(dtype=dtype)
    sparse_state = dense_state if config.unified_norm else enc.init_norm_state(dtype=dtype)
    return DualBranchModel(
        encoder=enc, shared_params=shared, proj_params=proj,
        norm_state_dense=dense_state, norm_state_sparse=sparse_state,
        mask=None, unified_norm=config.unified_norm,
    )


@dataclass
class TrainState:
    model: DualBranchModel
    config: TrainConfig
    epoch: int = 0                      # completed epochs
    step: int = 0                       # global step counter
    total_steps: int = 0
    velocities: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)     # mean loss per epoch
    log_rows: list = field(default_factory=list)          # (epoch, step, loss, lr, mask_hash)


def prunable_keys(model: DualBranchModel, config: TrainConfig):
    return model.encoder.prunable_keys(include_head=config.prune_projection_head)


def refresh_mask(state: TrainState) -> TrainState:
    """Recompute the mask from the current shared weights (epoch boundary)."""
    cfg = state.config
    model = state.model
    keys = prunable_keys(model, cfg)
    params = model.merged_params
    if cfg.competitor == "none":
        model.mask = all_ones_mask(params, prunable=keys, epoch=state.epoch)
    elif cfg.competitor == "magnitude":
        model.mask = magnitude_mask(params, cfg.prune_ratio, cfg.prune_scope,
                                    prunable=keys, epoch=state.epoch)
    else:
        rng = derive_rng(cfg.seed, "mask", state.epoch)
        model.mask = random_dropout_mask(params, cfg.prune_ratio, rng,
                                         prunable=keys, epoch=state.epoch)
    return state


def forward_dual(model: DualBranchModel, view1, view2, mode="train",
                 want_cache=False):
    """view1 through the dense branch, view2 through the masked branch.

    Under a unified norm state the sparse pass continues from the state the
    dense pass just produced, reproducing a sequential two-view forward.
    """
    params = model.merged_params
    eff = apply_mask(params, model.mask) if model.mask is not None else params
    res_d = model.encoder.forward(params, model.norm_state_dense, view1,
                                  mode, want_cache)
    sparse_start = res_d.norm_state if model.unified_norm else model.norm_state_sparse
    res_s = model.encoder.forward(eff, sparse_start, view2, mode, want_cache)
    return res_d, res_s


def dual_gradients(model: DualBranchModel, view1, view2, tau):
    """One loss evaluation with per-branch parameter gradients.

    Returns (loss, grads_dense, grads_sparse, res_dense, res_sparse) where
    grads_sparse is taken w.r.t. the sparse branch's effective (masked)
    weights; combining into shared-weight gradients is the caller's job.
    """
    res_d, res_s = forward_dual(model, view1, view2, "train", want_cache=True)
    b = res_d.projections.shape[0]
    z = np.vstack([res_d.projections, res_s.projections])
    batch = EmbeddingBatch(vectors=z, pair_ids=block_pairs(2 * b))
    loss, dz = ntxent_loss(batch, tau)
    params = model.merged_params
    eff = apply_mask(params, model.mask) if model.mask is not None else params
    grads_d = model.encoder.backward(dz[:b], res_d, params)
    grads_s = model.encoder.backward(dz[b:], res_s, eff)
    return loss, grads_d, grads_s, res_d, res_s


def combine_gradients(model: DualBranchModel, grads_d, grads_s):
    """Shared-weight gradient: dense plus mask-gated sparse contributions."""
    masks = model.mask.masks if model.mask is not None else {}
    out = {}
    for k in grads_d:
        g = grads_d[k] + grads_s[k]
        if k in masks:
            g = grads_d[k] + masks[k].astype(grads_s[k].dtype) * grads_s[k]
        out[k] = g
    return out


def lr_at(config: TrainConfig, step, total_steps, epoch):
    if config.schedule == "cosine":
        t = step / max(total_steps, 1)
        return config.lr * 0.5 * (1.0 + np.cos(np.pi * min(t, 1.0)))
    if config.schedule == "step":
        drops = sum(1 for m in config.step_milestones if epoch >= m)
        return config.lr * (config.step_gamma ** drops)
    return config.lr


def train_step(state: TrainState, view1, view2) -> float:
    """One SGD step on a pre-augmented pair of view batches."""
    cfg = state.config
    model = state.model
    loss, grads_d, grads_s, res_d, res_s = dual_gradients(model, view1, view2, cfg.tau)
    grads = combine_gradients(model, grads_d, grads_s)
    if not np.isfinite(loss):
        norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
        raise TrainingDiverged(state.epoch, state.step, loss, norms)

    lr = lr_at(cfg, state.step, state.total_steps, state.epoch)
    params = model.merged_params
    for k, g in grads.items():
        v = state.velocities.get(k)
        if v is None:
            v = np.zeros_like(params[k])
        v = cfg.momentum * v + g
        state.velocities[k] = v
        params[k] = params[k] - lr * v
    model.set_merged(params)

    # rule (c): each branch keeps its own statistics
    model.norm_state_dense = res_d.norm_state
    model.norm_state_sparse = res_s.norm_state
    if model.unified_norm:
        model.norm_state_dense = res_s.norm_state

    mask_hash = model.mask.digest() if model.mask is not None else ""
    state.log_rows.append((state.epoch, state.step, float(loss), float(lr), mask_hash))
    state.step += 1
    return float(loss)


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        if chunk.size >= 4:  # a contrastive batch needs negatives
            batches.append(chunk)
    return batches


def count_epoch_steps(n, batch_size):
    full, rem = divmod(n, batch_size)
    return full + (1 if rem >= 4 else 0)


def augment_views(images, locs, chain, seed, epoch, dtype):
    """Two augmented views per image, with per-(epoch, image, view) streams."""
    v1 = np.empty(images.shape[:1] + images.shape[1:], dtype=dtype)
    v2 = np.empty_like(v1)
    for j, loc in enumerate(locs):
        r1 = derive_rng(seed, "aug", epoch, int(loc), 0)
        r2 = derive_rng(seed, "aug", epoch, int(loc), 1)
        v1[j] = augment(images[j], chain, r1)
        v2[j] = augment(images[j], chain, r2)
    return v1, v2


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_GROUPS = ("shared", "proj", "bn_dense", "bn_sparse", "vel", "mask")


@dataclass
class Checkpoint:
    encoder_spec: EncoderSpec
    config: TrainConfig
    epoch: int
    shared_params: dict
    proj_params: dict
    norm_state_dense: dict
    norm_state_sparse: dict
    velocities: dict
    mask: PruneMask | None
    loss_history: list
    config_hash: str = ""

    def merged_params(self):
        return {**self.shared_params, **self.proj_params}

    def encoder(self):
        return Encoder(self.encoder_spec)

    def sidecar(self):
        mask_meta = None
        if self.mask is not None:
            mask_meta = {
                "target_ratio": self.mask.target_ratio,
                "scope": self.mask.scope,
                "epoch_created": self.mask.epoch_created,
                "digest": self.mask.digest(),
            }
        return {
            "format": 1,
            "epoch": self.epoch,
            "loss_history": self.loss_history,
            "encoder_spec": self.encoder_spec.to_dict(),
            "train_config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "mask": mask_meta,
        }

    def save(self, base):
        """Write <base>.npz (parameter blob) and <base>.json (sidecar)."""
        base = Path(base)
        arrays = {}
        for prefix, d in [("shared", self.shared_params), ("proj", self.proj_params),
                          ("bn_dense", self.norm_state_dense),
                          ("bn_sparse", self.norm_state_sparse),
                          ("vel", self.velocities)]:
            for k, v in d.items():
                arrays[f"{prefix}/{k}"] = v
        if self.mask is not None:
            for k, v in self.mask.masks.items():
                arrays[f"mask/{k}"] = v
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        atomic_write_bytes(base.with_suffix(".npz"), buf.getvalue())
        atomic_write_text(base.with_suffix(".json"),
                          json.dumps(self.sidecar(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, base):
        base = Path(base)
        meta = json.loads(base.with_suffix(".json").read_text())
        groups = {g: {} for g in _GROUPS}
        with np.load(base.with_suffix(".npz")) as z:
            for full in z.files:
                prefix, key = full.split("/", 1)
                groups[prefix][key] = z[full]
        mask = None
        if meta["mask"] is not None:
            mask = PruneMask(masks=groups["mask"],
                             target_ratio=meta["mask"]["target_ratio"],
                             scope=meta["mask"]["scope"],
                             epoch_created=meta["mask"]["epoch_created"])
        return cls(
            encoder_spec=EncoderSpec.from_dict(meta["encoder_spec"]),
            config=TrainConfig.from_dict(meta["train_config"]),
            epoch=meta["epoch"],
            shared_params=groups["shared"],
            proj_params=groups["proj"],
            norm_state_dense=groups["bn_dense"],
            norm_state_sparse=groups["bn_sparse"],
            velocities=groups["vel"],
            mask=mask,
            loss_history=meta["loss_history"],
            config_hash=meta.get("config_hash", ""),
        )


def state_to_checkpoint(state: TrainState, encoder_spec, config_hash="") -> Checkpoint:
    m = state.model
    return Checkpoint(
        encoder_spec=encoder_spec, config=state.config, epoch=state.epoch,
        shared_params=dict(m.shared_params), proj_params=dict(m.proj_params),
        norm_state_dense=dict(m.norm_state_dense),
        norm_state_sparse=dict(m.norm_state_sparse),
        velocities=dict(state.velocities), mask=m.mask,
        loss_history=list(state.loss_history), config_hash=config_hash,
    )


def checkpoint_to_state(ckpt: Checkpoint) -> TrainState:
    model = DualBranchModel(
        encoder=ckpt.encoder(), shared_params=dict(ckpt.shared_params),
        proj_params=dict(ckpt.proj_params),
        norm_state_dense=dict(ckpt.norm_state_dense),
        norm_state_sparse=dict(ckpt.norm_state_sparse),
        mask=ckpt.mask, unified_norm=ckpt.config.unified_norm,
    )
    if ckpt.config.unified_norm:
        model.norm_state_sparse = model.norm_state_dense
    return TrainState(model=model, config=ckpt.config, epoch=ckpt.epoch,
                      velocities=dict(ckpt.velocities),
                      loss_history=list(ckpt.loss_history))


def _read_log(out_dir):
    path = Path(out_dir) / "train_log.csv"
    if not path.exists():
        return []
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            rows.append((int(rec["epoch"]), int(rec["step"]), float(rec["loss"]),
                         float(rec["lr"]), rec["mask_hash"]))
    return rows


def _write_log(out_dir, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "step", "loss", "lr", "mask_hash"])
    for r in rows:
        w.writerow([r[0], r[1], f"{r[2]:.8f}", f"{r[3]:.8f}", r[4]])
    atomic_write_text(Path(out_dir) / "train_log.csv", buf.getvalue())


def _ckpt_path(out_dir, epoch):
    return Path(out_dir) / f"ckpt_e{epoch:04d}"


def pretrain(source_images, split, encoder_spec: EncoderSpec,
             config: TrainConfig, out_dir=None, chain: AugmentationChain = None,
             config_hash="", log_fn=None) -> Checkpoint:
    """Run the full pre-training loop and return the final checkpoint.

    ``source_images`` is the source train-image pool (uint8 NHWC); the split
    selects the subset to train on. When ``out_dir`` is given, a checkpoint
    is written every epoch (last two plus the best-loss epoch are kept) and
    an interrupted run resumes from the newest one.
    """
    chain = chain or simclr_chain()
    dtype = config.np_dtype()
    images = source_images[split.train_indices].astype(dtype) / 255.0
    n = images.shape[0]
    steps_per_epoch = count_epoch_steps(n, config.batch_size)

    state = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        existing = sorted(out_dir.glob("ckpt_e*.json"))
        if existing:
            state = checkpoint_to_state(Checkpoint.load(existing[-1].with_suffix("")))
            state.total_steps = config.epochs * steps_per_epoch
            state.step = state.epoch * steps_per_epoch
            # drop rows from a partially-logged epoch past the checkpoint
            state.log_rows = [r for r in _read_log(out_dir) if r[0] < state.epoch]
    if state is None:
        model = build_model(encoder_spec, config)
        state = TrainState(model=model, config=config,
                           total_steps=config.epochs * steps_per_epoch)
        if out_dir is not None:
            ckpt = state_to_checkpoint(state, encoder_spec, config_hash)
            ckpt.save(_ckpt_path(out_dir, 0))

    state.model.check_invariants()
    best_loss = min(state.loss_history) if state.loss_history else np.inf

    for epoch in range(state.epoch, config.epochs):
        if epoch % config.refresh_every == 0 or state.model.mask is None:
            refresh_mask(state)
        order_rng = derive_rng(config.seed, "order", epoch)
        losses = []
        for batch_locs in _epoch_batches(n, config.batch_size, order_rng):
            v1, v2 = augment_views(images[batch_locs], batch_locs, chain,
                                   config.seed, epoch, dtype)
            losses.append(train_step(state, v1, v2))
        state.epoch = epoch + 1
        mean_loss = float(np.mean(losses)) if losses else np.nan
        state.loss_history.append(mean_loss)
        if log_fn:
            log_fn(epoch, mean_loss)

        if out_dir is not None:
            ckpt = state_to_checkpoint(state, encoder_spec, config_hash)
            ckpt.save(_ckpt_path(out_dir, state.epoch))
            _write_log(out_dir, state.log_rows)
            _prune_old_checkpoints(out_dir, state, best_loss)
        best_loss = min(best_loss, mean_loss)

    ckpt = state_to_checkpoint(state, encoder_spec, config_hash)
    if out_dir is not None:
        ckpt.save(_ckpt_path(out_dir, state.epoch))
        _write_log(out_dir, state.log_rows)
        atomic_write_text(Path(out_dir) / "final.json",
                          stable_json({"final_epoch": state.epoch,
                                       "config_hash": config_hash}))
    return ckpt


def _prune_old_checkpoints(out_dir, state, best_loss_before):
    """Keep the last two epochs plus the best-loss epoch."""
    losses = state.loss_history
    if not losses:
        return
    best_epoch = int(np.argmin(losses)) + 1
    keep = {state.epoch, max(state.epoch - 1, 0), best_epoch}
    for js in Path(out_dir).glob("ckpt_e*.json"):
        e = int(js.stem.split("_e")[1])
        if e not in keep:
            js.unlink(missing_ok=True)
            js.with_suffix(".npz").unlink(missing_ok=True)


def params_digest(arrays: dict) -> str:
    return hash_arrays(arrays)
