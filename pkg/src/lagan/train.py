"""Adversarial training: losses, label flipping, Adam, the alternating step and the epoch loop."""

from __future__ import annotations

import csv
import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from lagan.model import (
    LaganConfig,
    LaganParams,
    discriminator_forward,
    generate,
    generator_forward,
    init_params,
    sample_latent,
)
from lagan.nn import checkpoint, ops
from lagan.nn.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "step", "d_loss", "g_loss", "aux_real", "aux_fake", "mean_p_real_on_fake")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, offending: list[str]):
        super().__init__(f"{message}; non-finite parameters/gradients: {offending}")
        self.offending = offending


@dataclass
class TrainConfig:
    batch_size: int = 100
    epochs: int = 40
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    primary_flip: float = 0.05
    aux_fake_flip: float = 0.05
    class_swap: float = 0.09
    seed: int = 0

    def __post_init__(self):
        for name in ("primary_flip", "aux_fake_flip", "class_swap"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")


# ----------------------------------------------------------------------------
# losses and label flipping


def flip_labels(targets, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Independently replace each binary target t by 1 - t with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"flip rate must lie in [0, 1], got {rate}")
    t = np.asarray(targets, dtype=np.float64)
    flips = rng.random(t.shape) < rate
    return np.where(flips, 1.0 - t, t)


def binary_cross_entropy(p, targets, eps: float = 1e-12) -> float:
    """Mean BCE on probabilities; ``eps`` keeps a confidently wrong prediction finite."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(targets, dtype=np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p)))


def adversarial_loss(p_real_on_real, p_real_on_fake, real_targets=None, fake_targets=None) -> dict:
    """Primary-head objectives on probabilities.

    Discriminator: BCE of real batch against ``real_targets`` (default 1)
    plus fake batch against ``fake_targets`` (default 0); maximising the
    log-likelihood objective is minimising this sum.  Generator: the
    non-saturating -log D(G(z)).
    """
    pr = np.asarray(p_real_on_real, dtype=np.float64)
    pf = np.asarray(p_real_on_fake, dtype=np.float64)
    rt = np.ones_like(pr) if real_targets is None else real_targets
    ft = np.zeros_like(pf) if fake_targets is None else fake_targets
    return {
        "d_loss": binary_cross_entropy(pr, rt) + binary_cross_entropy(pf, ft),
        "g_loss": binary_cross_entropy(pf, np.ones_like(pf)),
    }


def auxiliary_loss(p_signal, class_targets) -> float:
    return binary_cross_entropy(p_signal, class_targets)


# ----------------------------------------------------------------------------
# optimiser


class Adam:
    def __init__(self, tensors: list[Tensor], lr: float, beta1: float, beta2: float, eps: float = 1e-8):
        self.tensors = tensors
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in tensors]
        self.v = [np.zeros_like(p.values) for p in tensors]

    def zero_grad(self) -> None:
        for p in self.tensors:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        for p, m, v in zip(self.tensors, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr_t != 0.0:
                p.values -= lr_t * m / (np.sqrt(v) + self.eps)

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([float(self.t)])}
        for p, m, v in zip(self.tensors, self.m, self.v):
            out[f"{prefix}.m.{p.name}"] = m
            out[f"{prefix}.v.{p.name}"] = v
        return out


# ----------------------------------------------------------------------------
# trainer


class Trainer:
    """Owns the parameters, both optimisers and the RNG stream of one training run."""

    def __init__(self, params: LaganParams, config: TrainConfig, rng: np.random.Generator | None = None):
        self.params = params
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.g_params = params.group("g.")
        self.d_params = params.group("d.")
        kw = dict(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2, eps=config.adam_epsilon)
        self.opt_g = Adam(self.g_params, **kw)
        self.opt_d = Adam(self.d_params, **kw)

    def _check_finite(self, losses: dict) -> None:
        if all(np.isfinite(v) for v in losses.values()):
            return
        bad = [
            name
            for name, t in self.params.iter_named()
            if not np.all(np.isfinite(t.values)) or (t.grad is not None and not np.all(np.isfinite(t.grad)))
        ]
        raise TrainingDivergedError(f"non-finite loss {losses}", bad)

    def train_step(self, real_images: np.ndarray, real_labels: np.ndarray) -> dict:
        """One discriminator update then one generator update."""
        cfg = self.config
        rng = self.rng
        params = self.params
        n = real_images.shape[0]
        latent = params.config.latent_dim
        real = Tensor(real_images.reshape(n, *real_images.shape[1:3], 1))
        labels = np.asarray(real_labels, dtype=np.float64)

        z = sample_latent(rng, n, latent)
        classes = rng.integers(0, params.config.n_classes, size=n)
        fake = generator_forward(params, Tensor(z), classes, training=True)

        # discriminator: real batch and fake batch kept separate
        self.opt_d.zero_grad()
        r_logit, a_logit = discriminator_forward(params, real, training=True)
        real_t = flip_labels(np.ones(n), cfg.primary_flip, rng)
        loss_rr = ops.sigmoid_bce_with_logits(r_logit, real_t)
        loss_ar = ops.sigmoid_bce_with_logits(a_logit, labels)

        f_logit, fa_logit = discriminator_forward(params, fake.detach(), training=True)
        fake_t = flip_labels(np.zeros(n), cfg.primary_flip, rng)
        aux_fake_t = flip_labels(classes, cfg.aux_fake_flip, rng)
        loss_rf = ops.sigmoid_bce_with_logits(f_logit, fake_t)
        loss_af = ops.sigmoid_bce_with_logits(fa_logit, aux_fake_t)

        d_total = ops.add(ops.add(loss_rr, loss_ar), ops.add(loss_rf, loss_af))
        d_total.backward()
        self._check_finite({"d_loss": float(d_total.values)})
        self.opt_d.step()

        # generator through the updated, frozen discriminator
        self.opt_g.zero_grad()
        for p in self.d_params:
            p.requires_grad = False
        try:
            g_logit, ga_logit = discriminator_forward(params, fake, training=True, update_stats=False)
        finally:
            for p in self.d_params:
                p.requires_grad = True
        swapped = flip_labels(classes, cfg.class_swap, rng)
        g_adv = ops.sigmoid_bce_with_logits(g_logit, np.ones(n))
        g_aux = ops.sigmoid_bce_with_logits(ga_logit, swapped)
        g_total = ops.add(g_adv, g_aux)
        g_total.backward()
        self._check_finite({"g_loss": float(g_total.values)})
        self.opt_g.step()

        return {
            "d_loss": float(loss_rr.values + loss_rf.values),
            "g_loss": float(g_adv.values),
            "aux_real": float(loss_ar.values),
            "aux_fake": float(loss_af.values),
            "mean_p_real_on_fake": float(np.mean(ops._sigmoid(f_logit.values))),
        }


def train_step(params: LaganParams, real_images, real_labels, config: TrainConfig, rng=None) -> dict:
    """Functional wrapper: a fresh Trainer (fresh Adam moments) for one step."""
    return Trainer(params, config, rng).train_step(np.asarray(real_images), np.asarray(real_labels))


# ----------------------------------------------------------------------------
# epoch loop


@dataclass
class TrainResult:
    params: LaganParams
    checkpoints: list[Path] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    epoch_scores: list[dict] = field(default_factory=list)
    best_epoch: int | None = None


def save_params(path, params: LaganParams) -> None:
    checkpoint.save(path, params.to_arrays())
    meta = Path(str(path) + ".json")
    tmp = meta.with_name(meta.name + ".tmp")
    tmp.write_text(json.dumps(params.config.to_dict(), sort_keys=True, indent=2))
    os.replace(tmp, meta)


def load_params(path) -> LaganParams:
    meta = Path(str(path) + ".json")
    config = LaganConfig.from_dict(json.loads(meta.read_text())) if meta.exists() else LaganConfig()
    params = init_params(config, np.random.default_rng(0))
    params.load_arrays(checkpoint.load(path))
    return params


def train(
    config: TrainConfig,
    images: np.ndarray,
    labels: np.ndarray,
    out_dir=None,
    model_config: LaganConfig | None = None,
    params: LaganParams | None = None,
    epoch_callback: Callable[[int, LaganParams], dict | None] | None = None,
) -> TrainResult:
    """Shuffled-epoch adversarial training.

    ``images`` is [N, L, L] (GeV), ``labels`` 0/1.  A checkpoint is written per
    epoch when ``out_dir`` is given, together with ``metrics.csv``.  If
    ``epoch_callback`` returns a dict with a ``"score"`` key, the epoch with
    the lowest score is reported as ``best_epoch``.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    n = images.shape[0]
    if n < config.batch_size:
        raise ValueError(f"dataset of {n} images is smaller than one batch ({config.batch_size})")
    if len(np.unique(labels)) < 2:
        raise ValueError("training data must contain both classes")

    if params is None:
        # initialisation has its own stream: init_params(cfg, default_rng(seed))
        # reproduces the network a run with that seed starts from
        params = init_params(model_config or LaganConfig(), np.random.default_rng(config.seed))
    rng = np.random.default_rng(config.seed)
    trainer = Trainer(params, config, rng)
    result = TrainResult(params)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(metrics_file, fieldnames=METRIC_FIELDS)
        writer.writeheader()

    steps_per_epoch = n // config.batch_size
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            t0 = time.perf_counter()
            for step in range(steps_per_epoch):
                idx = order[step * config.batch_size : (step + 1) * config.batch_size]
                m = trainer.train_step(images[idx], labels[idx])
                row = {"epoch": epoch, "step": step, **m}
                result.metrics.append(row)
                if writer is not None:
                    writer.writerow(row)
            if writer is not None:
                metrics_file.flush()
            recent = result.metrics[-steps_per_epoch:]
            log.info(
                "epoch %d: d_loss=%.4f g_loss=%.4f p_real(fake)=%.3f (%.1fs)",
                epoch,
                np.mean([r["d_loss"] for r in recent]),
                np.mean([r["g_loss"] for r in recent]),
                np.mean([r["mean_p_real_on_fake"] for r in recent]),
                time.perf_counter() - t0,
            )
            if epoch == 1 and np.mean([r["mean_p_real_on_fake"] for r in recent]) < 1e-3:
                log.warning("discriminator saturated in the first epoch (mean P(real|fake) < 1e-3)")
            if out is not None:
                path = out / f"epoch_{epoch:03d}.lgn"
                save_params(path, params)
                result.checkpoints.append(path)
            if epoch_callback is not None:
                score = epoch_callback(epoch, params)
                if score is not None:
                    result.epoch_scores.append({"epoch": epoch, **score})
    finally:
        if writer is not None:
            metrics_file.close()

    scored = [s for s in result.epoch_scores if "score" in s]
    if scored:
        result.best_epoch = min(scored, key=lambda s: s["score"])["epoch"]
    if out is not None and result.epoch_scores:
        (out / "epoch_scores.json").write_text(
            json.dumps({"scores": result.epoch_scores, "best_epoch": result.best_epoch}, indent=2)
        )
    return result


# ----------------------------------------------------------------------------
# throughput


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'}; {os.cpu_count()} logical cores; numpy {np.__version__}; float64"


def throughput_bench(
    params: LaganParams,
    batch_size: int = 100,
    duration: float = 2.0,
    trials: int = 5,
    seed: int = 0,
) -> dict:
    """Images/second of inference-mode generation, mean and std over ``trials`` timed windows."""
    if trials < 5:
        raise ValueError("at least 5 trials are required")
    rng = np.random.default_rng(seed)
    latent = params.config.latent_dim
    z = sample_latent(rng, batch_size, latent)
    classes = rng.integers(0, params.config.n_classes, size=batch_size)
    generate(params, z, classes)  # warm-up
    rates = []
    for _ in range(trials):
        count = 0
        t0 = time.perf_counter()
        while True:
            generate(params, z, classes)
            count += batch_size
            elapsed = time.perf_counter() - t0
            if elapsed >= duration:
                break
        rates.append(count / elapsed)
    return {
        "images_per_second": float(np.mean(rates)),
        "std": float(np.std(rates, ddof=1)),
        "trials": trials,
        "batch_size": batch_size,
        "seconds_per_trial": duration,
        "hardware": hardware_note(),
    }
