"""Deterministic SGD training loop over the synthetic dataset."""

import time

import numpy as np

from ..autodiff import backward, clip_gradients, sgd_step, zero_grads
from ..errors import NumericError
from .heads import LossBreakdown


def train_network(net, dataset, optimizer_cfg, seed=0, batch_size=2,
                  augment_cfg=None, log_path=None, progress=None,
                  warmup_steps=50, grad_clip=10.0):
    """Train in place; returns the list of per-step log lines.

    All randomness (epoch shuffles, augmentation draws, proposal sampling)
    derives from `seed`, so a rerun reproduces the checkpoint bit for bit.
    The learning rate ramps linearly over the first warmup_steps and
    gradients are clipped to a global norm; the from-scratch backbone
    needs both where a pretrained large-batch run would not.
    """
    params = net.parameters()
    keys = dataset.sample_keys("train") or dataset.sample_keys()
    lines = []
    step = 0
    t0 = time.time()
    for epoch in range(optimizer_cfg.epochs):
        epoch_rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
        order = [keys[i] for i in epoch_rng.permutation(len(keys))]
        for start in range(0, len(order), batch_size):
            batch_keys = order[start:start + batch_size]
            breakdowns = []
            for key in batch_keys:
                sample = dataset.load_sample(key, rng=epoch_rng, augment_cfg=augment_cfg)
                if sample is None:
                    continue
                bd, _ = net.training_losses(sample, epoch_rng)
                breakdowns.append(bd)
            if not breakdowns:
                continue
            mean_parts = {
                name: sum(getattr(b, name) for b in breakdowns) * (1.0 / len(breakdowns))
                for name in LossBreakdown.PART_NAMES
            }
            batch_bd = LossBreakdown(**mean_parts)
            total = batch_bd.total()
            if not np.isfinite(total.data):
                raise NumericError(
                    f"non-finite loss at step {step}: {batch_bd.values()}"
                )
            zero_grads(params)
            backward(total)
            if grad_clip:
                clip_gradients(params, grad_clip)
            scale = min(1.0, (step + 1) / warmup_steps) if warmup_steps else 1.0
            sgd_step(params, optimizer_cfg, epoch, lr_scale=scale)
            values = batch_bd.values()
            parts_txt = " ".join(f"{k}={v:.6f}" for k, v in values.items())
            lines.append(
                f"step={step} epoch={epoch} "
                f"lr={optimizer_cfg.learning_rate(epoch) * scale:.6g} "
                f"{parts_txt} total={float(total.data):.6f}"
            )
            if progress is not None and step % progress == 0:
                print(lines[-1], flush=True)
            step += 1
    lines.append(f"trained {step} steps in {time.time() - t0:.1f}s")
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return lines
