"""Plain two-view contrastive trainer used as the reduction oracle.

A deliberately straightforward SimCLR loop: one weight store, one
normalization state, both augmented views pushed through the same network
sequentially, NT-Xent over the stacked projections, summed gradients, SGD
with momentum and a cosine schedule. No masks, no branches, no gradient
gating - so it exercises none of the dual-branch machinery it is used to
check against.

It shares only the low-level layer primitives and the input pipeline with
the package trainer; those are covered by their own finite-difference and
golden tests.
"""

import numpy as np

from sdclr.encoder import Encoder
from sdclr.losses import EmbeddingBatch, block_pairs, ntxent_loss
from sdclr.trainer import augment_views
from sdclr.util import derive_rng


def run_reference_simclr(source_images, split, encoder_spec, config, chain,
                         max_steps=None):
    """Train and return the per-step loss sequence (and final params)."""
    dtype = config.np_dtype()
    images = source_images[split.train_indices].astype(dtype) / 255.0
    n = images.shape[0]

    enc = Encoder(encoder_spec)
    params = enc.init_params(derive_rng(config.seed, "init"), dtype=dtype)
    state = enc.init_norm_state(dtype=dtype)
    velocities = {k: np.zeros_like(v) for k, v in params.items()}

    full, rem = divmod(n, config.batch_size)
    steps_per_epoch = full + (1 if rem >= 4 else 0)
    total_steps = config.epochs * steps_per_epoch

    losses = []
    step = 0
    for epoch in range(config.epochs):
        order = derive_rng(config.seed, "order", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            locs = order[start:start + config.batch_size]
            if locs.size < 4:
                continue
            v1, v2 = augment_views(images[locs], locs, chain, config.seed,
                                   epoch, dtype)
            res1 = enc.forward(params, state, v1, "train", want_cache=True)
            res2 = enc.forward(params, res1.norm_state, v2, "train",
                               want_cache=True)
            b = v1.shape[0]
            z = np.vstack([res1.projections, res2.projections])
            loss, dz = ntxent_loss(EmbeddingBatch(z, block_pairs(2 * b)),
                                   config.tau)
            g1 = enc.backward(dz[:b], res1, params)
            g2 = enc.backward(dz[b:], res2, params)

            lr = config.lr * 0.5 * (1.0 + np.cos(np.pi * step / max(total_steps, 1)))
            for k in params:
                g = g1[k] + g2[k]
                velocities[k] = config.momentum * velocities[k] + g
                params[k] = params[k] - lr * velocities[k]
            state = res2.norm_state

            losses.append(float(loss))
            step += 1
            if max_steps is not None and step >= max_steps:
                return losses, params, state
    return losses, params, state
