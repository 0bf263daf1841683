"""Adversarial-free training objective.

The composite is
    total = lambda_rec * L_rec + lambda_sem * L_sem + lambda_kl * L_kl
with image reconstruction combining four terms
    L_rec_image = l1 + 10 * lpips-style + 1e3 * gram + clip-style
while video and 3D reconstruction use plain L1.  The Gram term compares
feature self-correlations G(F) = F F^T / M per probe layer (M = spatial
positions); the perceptual and semantic-consistency terms run against the
same pluggable probe.  All losses are tape-differentiable and mean-reduced
(patch-normalized), so magnitudes are resolution-independent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import LengthMismatch, MissingTerm, ShapeMismatch


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 0.2
    lambda_sem: float = 1.0
    lambda_kl: float = 1e-8
    lambda_l1: float = 1.0
    lambda_lpips: float = 10.0
    lambda_gram: float = 1e3
    lambda_clip: float = 1.0
    tau: float = 2.0
    sigmoid_scale: float = 10.0
    sigmoid_bias: float = -10.0


class Task(enum.Enum):
    IMAGE_RECON = "I^r"
    VIDEO_RECON = "V^r"
    VIDEO_UNDERST = "V^u"
    THREED_RECON = "3D^r"
    THREED_UNDERST = "3D^u"

    @property
    def tag(self) -> str:
        return self.value


# parts required by each task; anything else is rejected
_SCHEMA = {
    Task.IMAGE_RECON: frozenset({"l1", "lpips", "gram", "clip", "sem", "kl"}),
    Task.VIDEO_RECON: frozenset({"l1", "sem", "kl"}),
    Task.THREED_RECON: frozenset({"l1", "sem", "kl"}),
    Task.VIDEO_UNDERST: frozenset({"sem"}),
    Task.THREED_UNDERST: frozenset({"sem"}),
}


def _pair(x, y):
    x, y = ad.as_tensor(x), ad.as_tensor(y)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    return x, y


def l1_loss(x, x_hat) -> ad.Tensor:
    """Mean absolute difference over all elements."""
    x, x_hat = _pair(x, x_hat)
    return ad.absolute(x - x_hat).mean()


def gram_matrix(feat: ad.Tensor) -> ad.Tensor:
    """Channel self-correlation F F^T / M for a (C, H, W) feature map."""
    c = feat.shape[0]
    flat = feat.reshape(c, -1)
    return ad.matmul(flat, flat.transpose()) * (1.0 / flat.shape[1])


def gram_loss(x, x_hat, probe) -> ad.Tensor:
    """Sum over probe layers of the squared Frobenius Gram difference."""
    x, x_hat = _pair(x, x_hat)
    return gram_from_features(probe.features_t(x), probe.features_t(x_hat))


def gram_from_features(feats_a, feats_b) -> ad.Tensor:
    total = ad.constant(0.0)
    for fa, fb in zip(feats_a, feats_b):
        diff = gram_matrix(ad.as_tensor(fa)) - gram_matrix(ad.as_tensor(fb))
        total = total + (diff * diff).sum()
    return total


def lpips_like(x, x_hat, probe) -> ad.Tensor:
    """Layerwise channel-normalized feature distance (perceptual stand-in)."""
    x, x_hat = _pair(x, x_hat)
    return lpips_from_features(probe.features_t(x), probe.features_t(x_hat))


def lpips_from_features(feats_a, feats_b) -> ad.Tensor:
    total = ad.constant(0.0)
    for fa, fb in zip(feats_a, feats_b):
        diff = _unit_channels(ad.as_tensor(fa)) - _unit_channels(ad.as_tensor(fb))
        total = total + (diff * diff).sum(axis=0).mean()
    return total


def _unit_channels(feat: ad.Tensor) -> ad.Tensor:
    norm = ad.sqrt((feat * feat).sum(axis=0, keepdims=True) + 1e-10)
    return feat / norm


def clip_like(x, x_hat, probe) -> ad.Tensor:
    """Cosine distance between mean-pooled final probe features."""
    x, x_hat = _pair(x, x_hat)
    return clip_from_features(probe.features_t(x), probe.features_t(x_hat))


def clip_from_features(feats_a, feats_b) -> ad.Tensor:
    a = ad.as_tensor(feats_a[-1]).mean(axis=(1, 2))
    b = ad.as_tensor(feats_b[-1]).mean(axis=(1, 2))
    denom = ad.sqrt((a * a).sum()) * ad.sqrt((b * b).sum()) + 1e-10
    return 1.0 - (a * b).sum() / denom


def kl_gauss(mu, logvar) -> ad.Tensor:
    """Mean over dims of 0.5 (mu^2 + exp(logvar) - 1 - logvar); >= 0."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"{mu.shape} vs {logvar.shape}")
    return ((mu * mu + ad.exp(logvar) - 1.0 - logvar) * 0.5).mean()


def distill_kl(teacher_sims, student_sims, tau: float = 2.0) -> ad.Tensor:
    """KL(softmax(teacher/tau) || softmax(student/tau)), mean over batch."""
    t, s = ad.as_tensor(teacher_sims), ad.as_tensor(student_sims)
    if t.shape != s.shape:
        raise LengthMismatch(f"{t.shape} vs {s.shape}")
    if t.ndim == 1:
        t, s = t.reshape(1, -1), s.reshape(1, -1)
    log_p = ad.log_softmax(t * (1.0 / tau), axis=-1)
    log_q = ad.log_softmax(s * (1.0 / tau), axis=-1)
    p = ad.softmax(t * (1.0 / tau), axis=-1)
    return (p * (log_p - log_q)).sum(axis=-1).mean()


def sigmoid_pair_loss(img_embs, txt_embs, match, scale: float = 10.0,
                      bias: float = -10.0) -> ad.Tensor:
    """Mean over pairs of -log sigmoid(z * (scale * <i, j> + bias)).

    `match` holds +1 for matching (image, text) pairs and -1 otherwise.
    Embeddings are expected unit-norm.
    """
    img, txt = ad.as_tensor(img_embs), ad.as_tensor(txt_embs)
    z = np.asarray(match, dtype=np.float64)
    if img.ndim == 1:
        img = img.reshape(1, -1)
    if z.shape != (img.shape[0], txt.shape[0]):
        raise ShapeMismatch(f"match {z.shape} vs {(img.shape[0], txt.shape[0])}")
    logits = ad.matmul(img, txt.transpose()) * scale + bias
    return ad.softplus(logits * ad.constant(-z)).mean()


def total_loss(task: Task, parts: dict, weights: LossWeights = LossWeights()):
    """Weighted composite for one step; returns (scalar, report).

    `parts` must contain exactly the terms the task's schema names; the
    report lists every term before and after weighting.
    """
    required = _SCHEMA[task]
    got = frozenset(parts)
    if got != required:
        missing = required - got
        extra = got - required
        raise MissingTerm(
            f"{task.tag}: missing {sorted(missing)}, unexpected {sorted(extra)}")

    w = weights
    inner = {"l1": w.lambda_l1, "lpips": w.lambda_lpips,
             "gram": w.lambda_gram, "clip": w.lambda_clip}
    report: dict[str, float] = {}
    total = ad.constant(0.0)
    rec = None
    for name, lam in inner.items():
        if name not in parts:
            continue
        term = ad.as_tensor(parts[name])
        report[name] = term.item()
        report[name + "_weighted"] = w.lambda_rec * lam * term.item()
        rec = term * lam if rec is None else rec + term * lam
    if rec is not None:
        total = total + rec * w.lambda_rec
    if "sem" in parts:
        sem = ad.as_tensor(parts["sem"])
        report["sem"] = sem.item()
        report["sem_weighted"] = w.lambda_sem * sem.item()
        total = total + sem * w.lambda_sem
    if "kl" in parts:
        kl = ad.as_tensor(parts["kl"])
        report["kl"] = kl.item()
        report["kl_weighted"] = w.lambda_kl * kl.item()
        total = total + kl * w.lambda_kl
    report["total"] = total.item()
    return total, report


@dataclass
class LossReport:
    """One training step's loss readout, formatted for the log stream."""

    step: int
    task: Task
    lr: float
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        keys = ("l1", "gram", "kl", "sem")
        parts = [f"step={self.step}", f"task={self.task.tag}",
                 f"loss={self.values.get('total', 0.0):.6g}"]
        parts += [f"{k}={self.values.get(k, 0.0):.6g}" for k in keys]
        parts.append(f"lr={self.lr:.6g}")
        return " ".join(parts)
