"""Frozen-backbone probes, group/balancedness metrics, and mining of the
samples most affected by pruning.

Probing always runs on the dense branch in eval mode: features are
extracted once with frozen weights and normalization statistics, then a
single affine layer is trained on top with SGD. The probe schedules are
fixed protocol constants: learning rate 30 with momentum 0.9 and no weight
decay; 30 epochs with 10x decays at epochs 10 and 20 for the full probe,
100 epochs with decays at 40 and 60 for the few-shot probe.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .longtail import GROUP_NAMES
from .pruning import apply_mask, magnitude_mask
from .util import derive_rng

logger = logging.getLogger(__name__)

LINEAR_SCHEDULE = {"lr": 30.0, "momentum": 0.9, "epochs": 30, "milestones": (10, 20)}
FEWSHOT_SCHEDULE = {"lr": 30.0, "momentum": 0.9, "epochs": 100, "milestones": (40, 60)}


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 30.0
    momentum: float = 0.9
    epochs: int = 30
    milestones: tuple = (10, 20)
    gamma: float = 0.1
    batch_size: int = 256

    @classmethod
    def linear(cls):
        return cls(**{**LINEAR_SCHEDULE, "gamma": 0.1, "batch_size": 256})

    @classmethod
    def few_shot(cls):
        return cls(**{**FEWSHOT_SCHEDULE, "gamma": 0.1, "batch_size": 256})


@dataclass
class LinearClassifier:
    weight: np.ndarray  # (feature_dim, n_classes)
    bias: np.ndarray    # (n_classes,)

    def logits(self, features):
        return features @ self.weight + self.bias

    def predict(self, features):
        return self.logits(features).argmax(axis=1)


def extract_features(checkpoint, images, branch="dense", batch_size=256,
                     feature_source="backbone", mask=None):
    """Eval-mode features for an image batch (uint8 or [0,1] float NHWC).

    branch="dense" runs the plain weights with the dense normalization
    state; branch="sparse" applies the prune mask (the checkpoint's unless
    one is given) and uses the sparse state, i.e. exactly how the masked
    branch ran during training.
    """
    enc = checkpoint.encoder()
    params = checkpoint.merged_params()
    if branch == "dense":
        state = checkpoint.norm_state_dense
    elif branch == "sparse":
        m = mask if mask is not None else checkpoint.mask
        if m is not None:
            params = apply_mask(params, m)
        state = checkpoint.norm_state_sparse
    else:
        raise InvalidParameterError(f"branch must be dense|sparse, got {branch!r}")

    dtype = checkpoint.config.np_dtype()
    if images.dtype == np.uint8:
        images = images.astype(dtype) / 255.0
    outs = []
    for start in range(0, images.shape[0], batch_size):
        chunk = np.ascontiguousarray(images[start:start + batch_size], dtype=dtype)
        feats, projs, _ = enc.encode(params, state, chunk, mode="eval")
        outs.append(projs if feature_source == "projection" else feats)
    return np.concatenate(outs, axis=0)


def train_linear_head(features, labels, n_classes, cfg: ProbeConfig,
                      seed=0) -> LinearClassifier:
    """Softmax regression on frozen features with the pinned SGD schedule."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = features.shape
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    onehot = np.eye(n_classes)[labels]

    for epoch in range(cfg.epochs):
        lr = cfg.lr * (cfg.gamma ** sum(1 for m in cfg.milestones if epoch >= m))
        order = derive_rng(seed, "probe", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            f = features[idx]
            logits = f @ w + b
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            g = (p - onehot[idx]) / idx.size
            gw = f.T @ g
            gb = g.sum(axis=0)
            vw = cfg.momentum * vw + gw
            vb = cfg.momentum * vb + gb
            w = w - lr * vw
            b = b - lr * vb
    return LinearClassifier(weight=w, bias=b)


def _check_balanced(labels):
    counts = np.bincount(labels)
    counts = counts[counts > 0]
    return counts.max() - counts.min() <= 1


def linear_probe(checkpoint, images, labels, cfg: ProbeConfig = None,
                 seed=0, batch_size=256):
    """Train the full-shot linear probe; returns (classifier, notes)."""
    cfg = cfg or ProbeConfig.linear()
    notes = []
    labels = np.asarray(labels, dtype=np.int64)
    if not _check_balanced(labels):
        warnings.warn("probe label set is not balanced; protocol deviation recorded",
                      UserWarning, stacklevel=2)
        notes.append("unbalanced_probe_set")
    feats = extract_features(checkpoint, images, batch_size=batch_size)
    n_classes = int(labels.max()) + 1
    clf = train_linear_head(feats, labels, n_classes, cfg, seed=seed)
    return clf, notes


def few_shot_subsample(labels, fraction, seed):
    """Per-class subsample of ceil(fraction * class size), at least 1 each."""
    if not (0.0 < fraction <= 1.0):
        raise InvalidParameterError("fraction must be in (0, 1]")
    labels = np.asarray(labels, dtype=np.int64)
    rng = derive_rng(seed, "fewshot")
    picked = []
    for c in np.unique(labels):
        pool = np.flatnonzero(labels == c)
        if pool.size == 0:
            raise InvalidParameterError(f"class {c} has no samples")
        want = max(1, math.ceil(fraction * pool.size))
        picked.append(np.sort(rng.choice(pool, size=want, replace=False)))
    return np.concatenate(picked)


def few_shot_probe(checkpoint, images, labels, fraction=0.01,
                   cfg: ProbeConfig = None, seed=0, batch_size=256):
    """1%-style probe: subsample per class, then train with the long schedule."""
    cfg = cfg or ProbeConfig.few_shot()
    labels = np.asarray(labels, dtype=np.int64)
    idx = few_shot_subsample(labels, fraction, seed)
    clf, notes = linear_probe(checkpoint, images[idx], labels[idx],
                              cfg=cfg, seed=seed, batch_size=batch_size)
    return clf, idx, notes


@dataclass
class EvalReport:
    per_class_acc: dict          # class id -> accuracy in [0, 100]
    group_acc: dict              # many/medium/few -> accuracy or None
    std_groups: float
    all_acc: float
    protocol: str                # "linear" | "few_shot"
    config_hash: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class_acc": {str(k): v for k, v in self.per_class_acc.items()},
            "group_acc": self.group_acc,
            "std_groups": self.std_groups,
            "all_acc": self.all_acc,
            "protocol": self.protocol,
            "config_hash": self.config_hash,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            per_class_acc={int(k): v for k, v in d["per_class_acc"].items()},
            group_acc=d["group_acc"], std_groups=d["std_groups"],
            all_acc=d["all_acc"], protocol=d["protocol"],
            config_hash=d.get("config_hash", ""), notes=d.get("notes", []),
        )


def group_std(values):
    """Population standard deviation of the available group accuracies."""
    vals = [v for v in values if v is not None]
    return float(np.std(vals)) if vals else 0.0


def evaluate(classifier, checkpoint, test_images, test_labels, groups,
             protocol="linear", config_hash="", batch_size=256) -> EvalReport:
    """Accuracy report: per class, per size group, balancedness Std, All."""
    test_labels = np.asarray(test_labels, dtype=np.int64)
    feats = extract_features(checkpoint, test_images, batch_size=batch_size)
    pred = classifier.predict(feats)
    correct = pred == test_labels

    per_class = {}
    for c in np.unique(test_labels):
        m = test_labels == c
        per_class[int(c)] = float(100.0 * correct[m].mean())

    group_acc = {}
    for name, members in zip(GROUP_NAMES, (groups.many, groups.medium, groups.few)):
        accs = [per_class[c] for c in members if c in per_class]
        group_acc[name] = float(np.mean(accs)) if accs else None
    report = EvalReport(
        per_class_acc=per_class,
        group_acc=group_acc,
        std_groups=group_std(group_acc.values()),
        all_acc=float(100.0 * correct.mean()),
        protocol=protocol,
        config_hash=config_hash,
    )
    return report


@dataclass
class PieReport:
    """Ranking of samples by how much pruning disturbs their features."""

    scores: np.ndarray           # per sample: 1 - cosine(dense, masked)
    ranked_indices: np.ndarray   # descending score
    top_fraction: float
    group_pct: dict              # many/medium/few -> share of the top set, in %
    config_hash: str = ""

    def to_dict(self):
        return {
            "scores": np.asarray(self.scores).tolist(),
            "ranked_indices": np.asarray(self.ranked_indices).tolist(),
            "top_fraction": self.top_fraction,
            "group_pct": self.group_pct,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scores=np.asarray(d["scores"]),
            ranked_indices=np.asarray(d["ranked_indices"], dtype=np.int64),
            top_fraction=d["top_fraction"],
            group_pct=d["group_pct"],
            config_hash=d.get("config_hash", ""),
        )


def cosine_forgetting(dense, masked):
    """1 - cosine similarity per row; zero-norm rows score the maximum of 2.

    Invariant to positive rescaling of either feature matrix.
    """
    dense = np.asarray(dense, dtype=np.float64)
    masked = np.asarray(masked, dtype=np.float64)
    nd = np.linalg.norm(dense, axis=1)
    nm = np.linalg.norm(masked, axis=1)
    bad = (nd == 0) | (nm == 0)
    if bad.any():
        logger.warning("%d zero-norm feature vectors scored as fully forgotten",
                       int(bad.sum()))
    denom = np.where(bad, 1.0, nd * nm)
    cos = (dense * masked).sum(axis=1) / denom
    scores = 1.0 - cos
    scores[bad] = 2.0
    return np.clip(scores, 0.0, 2.0)


def forgetting_scores(checkpoint, images, ratio=None, feature_source="backbone",
                      batch_size=256):
    """1 - cosine similarity between dense and masked features, per sample.

    The masked pass reuses the sparse branch's own normalization state. When
    ``ratio`` differs from the checkpoint's mask, a fresh magnitude mask is
    computed from the checkpoint weights at that ratio.
    """
    mask = checkpoint.mask
    if ratio is not None and (mask is None or mask.target_ratio != ratio):
        keys = checkpoint.encoder().prunable_keys(
            include_head=checkpoint.config.prune_projection_head)
        mask = magnitude_mask(checkpoint.merged_params(), ratio,
                              checkpoint.config.prune_scope, prunable=keys)
    dense = extract_features(checkpoint, images, branch="dense",
                             feature_source=feature_source, batch_size=batch_size)
    masked = extract_features(checkpoint, images, branch="sparse", mask=mask,
                              feature_source=feature_source, batch_size=batch_size)
    return cosine_forgetting(dense, masked)


def pie_mine(checkpoint, images, labels, groups, ratio=None, top_fraction=0.01,
             feature_source="backbone", config_hash="", batch_size=256) -> PieReport:
    """Rank samples by forgetting score and report who sits in the top slice."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = forgetting_scores(checkpoint, images, ratio=ratio,
                               feature_source=feature_source, batch_size=batch_size)
    # sub-1e-12 score differences are floating-point noise, not signal;
    # treating them as ties keeps the ranking stable
    ranked = np.argsort(-np.round(scores, 12), kind="stable")
    top_n = max(1, math.ceil(top_fraction * scores.size))
    top_labels = labels[ranked[:top_n]]

    class_to_group = {}
    for name, members in zip(GROUP_NAMES, (groups.many, groups.medium, groups.few)):
        for c in members:
            class_to_group[c] = name
    pct = {name: 0.0 for name in GROUP_NAMES}
    for lab in top_labels:
        pct[class_to_group[int(lab)]] += 1.0
    for name in pct:
        pct[name] = 100.0 * pct[name] / top_n
    return PieReport(scores=scores, ranked_indices=ranked,
                     top_fraction=top_fraction, group_pct=pct,
                     config_hash=config_hash)
