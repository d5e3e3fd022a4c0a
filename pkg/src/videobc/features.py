"""Offline self-supervised feature pretraining.

Two tasks are available: a contrastive + self-reconstruction objective for
style-heavy discrete tasks, and a prototype temporal-association objective
with doubly-normalized clustering targets for dynamics-heavy continuous
tasks. A momentum copy of the encoder provides stable targets for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DatasetError, NumericError
from .nets import (FEATURE_DIM, ContrastiveHead, FeatureEncoder,
                   PrototypeBank, ReconstructionDecoder, mlp, obs_to_tensor)

CONTRASTIVE_RECON = "contrastive_recon"
PROTO_TEMPORAL = "proto_temporal"


@dataclass
class FeaturePretrainConfig:
    task: str = CONTRASTIVE_RECON
    alpha: float = 0.1            # reconstruction coefficient
    pad_max: int = 1              # random-shift padding upper bound
    ema_momentum: float = 0.05
    ema_frequency: int = 2
    sinkhorn_iters: int = 3
    n_prototypes: int = 64
    temperature: float = 0.1
    update_count: int = 1500
    batch_size: int = 64
    lr: float = 3e-4
    holdout_frac: float = 0.05
    feature_dim: int = FEATURE_DIM
    channels: int = 32
    # sample each contrastive batch as short runs of consecutive frames, so
    # temporal neighbors act as hard negatives and force the features to
    # resolve small (sub-disc-radius) position differences
    temporal_negatives: bool = False
    clip_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.task not in (CONTRASTIVE_RECON, PROTO_TEMPORAL):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.alpha < 0 or self.pad_max < 0:
            raise ConfigurationError("alpha and pad_max must be non-negative")
        if not 0 < self.ema_momentum <= 1:
            raise ConfigurationError("ema_momentum must be in (0, 1]")
        if self.ema_frequency < 1 or self.sinkhorn_iters < 1:
            raise ConfigurationError("frequencies/iters must be positive")
        if self.update_count < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigurationError("invalid optimizer settings")
        if self.clip_len < 1:
            raise ConfigurationError("clip_len must be positive")
        if self.temporal_negatives and self.batch_size % self.clip_len != 0:
            raise ConfigurationError(
                "batch_size must be a multiple of clip_len when "
                "temporal_negatives is enabled")


# -- augmentation ------------------------------------------------------------

def random_shift(obs: np.ndarray, pad_max: int, rng: np.random.Generator):
    """Replicate-pad a HWC uint8 image by a random amount, then crop back."""
    if pad_max < 0:
        raise ConfigurationError("pad_max must be >= 0")
    if pad_max == 0:
        return obs.copy()
    p = int(rng.integers(0, pad_max + 1))
    if p == 0:
        return obs.copy()
    padded = np.pad(obs, ((p, p), (p, p), (0, 0)), mode="edge")
    r = int(rng.integers(0, 2 * p + 1))
    c = int(rng.integers(0, 2 * p + 1))
    h, w = obs.shape[:2]
    return padded[r:r + h, c:c + w].copy()


def random_shift_batch(x: torch.Tensor, pad_max: int,
                       rng: np.random.Generator) -> torch.Tensor:
    """Per-sample random shift of a float NCHW batch (replicate padding)."""
    if pad_max == 0:
        return x
    n, _, h, w = x.shape
    padded = F.pad(x, (pad_max,) * 4, mode="replicate")
    out = torch.empty_like(x)
    ps = rng.integers(0, pad_max + 1, size=n)
    for i in range(n):
        p = int(ps[i])
        dr = int(rng.integers(-p, p + 1))
        dc = int(rng.integers(-p, p + 1))
        out[i] = padded[i, :, pad_max + dr:pad_max + dr + h,
                        pad_max + dc:pad_max + dc + w]
    return out


# -- momentum encoder --------------------------------------------------------

@torch.no_grad()
def ema_update(f_prime: torch.nn.Module, f: torch.nn.Module, m: float) -> None:
    """theta' <- (1 - m) * theta' + m * theta."""
    src = dict(f.named_parameters())
    dst = dict(f_prime.named_parameters())
    if src.keys() != dst.keys() or any(src[k].shape != dst[k].shape
                                       for k in src):
        raise ConfigurationError("encoder architectures differ")
    for k in src:
        dst[k].mul_(1.0 - m).add_(src[k], alpha=m)


# -- contrastive + reconstruction task ---------------------------------------

def contrastive_recon_loss_from_aug(aug_anchor: torch.Tensor,
                                    aug_key: torch.Tensor,
                                    f, f_prime, head: ContrastiveHead,
                                    dec: ReconstructionDecoder,
                                    alpha: float) -> torch.Tensor:
    """InfoNCE over bilinear scores plus pixel reconstruction of the anchor.

    Anchors flow through ``f`` (and the asymmetric head); keys flow through
    the momentum encoder without gradient.
    """
    if aug_anchor.shape[0] == 0:
        raise DatasetError("empty batch")
    s = f(aug_anchor)
    with torch.no_grad():
        s_key = f_prime(aug_key)
    logits = head.logits(s, s_key)
    labels = torch.arange(len(s), device=s.device)
    loss = F.cross_entropy(logits, labels)
    if alpha > 0:
        recon = dec(s)
        loss = loss + alpha * F.mse_loss(recon, aug_anchor)
    return loss


def contrastive_recon_loss(obs_batch: np.ndarray, f, f_prime,
                           head: ContrastiveHead, dec: ReconstructionDecoder,
                           alpha: float, pad_max: int,
                           rng: np.random.Generator) -> torch.Tensor:
    """Augment a uint8 batch twice and evaluate the pretraining objective."""
    x = obs_to_tensor(obs_batch, dtype=next(f.parameters()).dtype)
    aug1 = random_shift_batch(x, pad_max, rng)
    aug2 = random_shift_batch(x, pad_max, rng)
    return contrastive_recon_loss_from_aug(aug1, aug2, f, f_prime, head,
                                           dec, alpha)


# -- prototype temporal-association task --------------------------------------

def prototype_scores(s: torch.Tensor, bank: PrototypeBank, u) -> torch.Tensor:
    """Softmax rows over scaled dot products with the prototypes."""
    logits = u(s) @ bank.prototypes.T / bank.temperature
    return F.softmax(logits, dim=1)


def doubly_normalize(c: torch.Tensor, iters: int) -> list[torch.Tensor]:
    """Apply ``iters`` row-then-column normalizations; returns the matrix
    after each full round. Rows are scaled to sum 1/M, columns to sum 1/N."""
    n, m = c.shape
    history = []
    for _ in range(iters):
        c = c / (m * c.sum(dim=1, keepdim=True))
        c = c / (n * c.sum(dim=0, keepdim=True))
        history.append(c)
    return history


@torch.no_grad()
def sinkhorn_targets(next_feats: torch.Tensor, bank: PrototypeBank,
                     iters: int, return_raw: bool = False):
    """Balanced clustering targets from repeated row/column normalization.

    Dot products are temperature-scaled and exponentiated (with a
    stabilizing max subtraction) so the normalizations act on positive,
    well-separated mass. Each row normalization scales
    rows to sum 1/M (M prototypes); each column normalization scales columns
    to sum 1/N (N samples). Target rows are rescaled to sum 1.
    """
    if iters < 1:
        raise ConfigurationError("iters must be >= 1")
    n = next_feats.shape[0]
    m = bank.prototypes.shape[0]
    scores = next_feats @ bank.prototypes.T / bank.temperature
    if not torch.isfinite(scores).all():
        raise NumericError("non-finite similarity matrix")
    c = torch.exp(scores - scores.max(dim=1, keepdim=True).values)
    c = doubly_normalize(c, iters)[-1]
    targets = c / c.sum(dim=1, keepdim=True)
    return (targets, c) if return_raw else targets


def temporal_assoc_loss_from_feats(s: torch.Tensor, targets: torch.Tensor,
                                   bank: PrototypeBank, u) -> torch.Tensor:
    """Cross-entropy of prototype scores against fixed clustering targets."""
    x = prototype_scores(s, bank, u)
    return -(targets * torch.log(x + 1e-12)).sum(dim=1).mean()


def temporal_assoc_loss(obs: np.ndarray, obs_next: np.ndarray, f, f_prime,
                        bank: PrototypeBank, u, cfg: FeaturePretrainConfig,
                        rng: np.random.Generator) -> torch.Tensor:
    """Temporal association loss over a batch of consecutive-frame pairs."""
    if len(obs) < 2:
        raise DatasetError("temporal association needs at least 2 pairs")
    dtype = next(f.parameters()).dtype
    x_cur = random_shift_batch(obs_to_tensor(obs, dtype=dtype), cfg.pad_max, rng)
    x_next = random_shift_batch(obs_to_tensor(obs_next, dtype=dtype),
                                cfg.pad_max, rng)
    s = f(x_cur)
    with torch.no_grad():
        s_next = f_prime(x_next)
        targets = sinkhorn_targets(s_next, bank, cfg.sinkhorn_iters)
    return temporal_assoc_loss_from_feats(s, targets, bank, u)


# -- training loop -------------------------------------------------------------

class FeaturePretrainer:
    """Fits the visual encoder on an action-free video dataset.

    After ``fit``: ``encoder_`` (f), ``momentum_encoder_`` (f'), the
    task-specific heads, and ``loss_history_``.
    """

    def __init__(self, cfg: FeaturePretrainConfig):
        self.cfg = cfg

    def get_params(self) -> dict:
        return dict(vars(self.cfg))

    def _build(self, videos):
        h, w, c = videos.frames.shape[1:]
        cfg = self.cfg
        torch.manual_seed(cfg.seed)
        self.encoder_ = FeatureEncoder(h, c, cfg.feature_dim, cfg.channels)
        self.momentum_encoder_ = FeatureEncoder(h, c, cfg.feature_dim,
                                                cfg.channels)
        self.momentum_encoder_.load_state_dict(self.encoder_.state_dict())
        for p in self.momentum_encoder_.parameters():
            p.requires_grad_(False)
        params = list(self.encoder_.parameters())
        if cfg.task == CONTRASTIVE_RECON:
            self.head_ = ContrastiveHead(cfg.feature_dim)
            self.recon_decoder_ = ReconstructionDecoder(self.encoder_,
                                                        cfg.channels)
            params += list(self.head_.parameters())
            params += list(self.recon_decoder_.parameters())
        else:
            self.bank_ = PrototypeBank(cfg.n_prototypes, cfg.feature_dim,
                                       cfg.temperature)
            self.proj_ = mlp([cfg.feature_dim, 256, cfg.feature_dim])
            params += list(self.bank_.parameters())
            params += list(self.proj_.parameters())
        self.optimizer_ = torch.optim.Adam(params, lr=cfg.lr)

    def _split(self, videos):
        n_hold = max(2, int(len(videos) * self.cfg.holdout_frac))
        train_pairs = videos.pair_indices()
        train_pairs = train_pairs[train_pairs < len(videos) - n_hold - 1]
        if len(train_pairs) == 0:
            raise DatasetError("dataset too small for the holdout split")
        return train_pairs, np.arange(len(videos) - n_hold, len(videos))

    def _batch_loss(self, videos, idx, rng):
        cfg = self.cfg
        if cfg.task == CONTRASTIVE_RECON:
            return contrastive_recon_loss(videos.frames[idx], self.encoder_,
                                          self.momentum_encoder_, self.head_,
                                          self.recon_decoder_, cfg.alpha,
                                          cfg.pad_max, rng)
        return temporal_assoc_loss(videos.frames[idx], videos.frames[idx + 1],
                                   self.encoder_, self.momentum_encoder_,
                                   self.bank_, self.proj_, cfg, rng)

    def fit(self, videos) -> "FeaturePretrainer":
        cfg = self.cfg
        self._build(videos)
        train_pairs, self.holdout_indices_ = self._split(videos)
        rng = np.random.default_rng(cfg.seed)
        self.loss_history_ = []
        blocks = cfg.temporal_negatives and cfg.task == CONTRASTIVE_RECON
        if blocks:
            clip_starts = train_pairs[
                train_pairs <= train_pairs.max() - cfg.clip_len + 1]
            if len(clip_starts) == 0:
                raise DatasetError("dataset too small for clip sampling")
        for step in range(cfg.update_count):
            if blocks:
                s0 = rng.choice(clip_starts,
                                size=cfg.batch_size // cfg.clip_len)
                idx = (s0[:, None] + np.arange(cfg.clip_len)[None, :]).ravel()
            else:
                idx = rng.choice(train_pairs, size=cfg.batch_size)
            loss = self._batch_loss(videos, idx, rng)
            self.optimizer_.zero_grad()
            loss.backward()
            self.optimizer_.step()
            if cfg.task == PROTO_TEMPORAL:
                self.bank_.renormalize()
            if (step + 1) % cfg.ema_frequency == 0:
                ema_update(self.momentum_encoder_, self.encoder_,
                           cfg.ema_momentum)
            self.loss_history_.append(float(loss.detach()))
        return self

    @torch.no_grad()
    def holdout_loss(self, videos, seed: int = 0) -> float:
        """Monitoring loss on the reserved trailing slice (never trained on)."""
        idx = self.holdout_indices_[:-1]
        rng = np.random.default_rng(seed)
        return float(self._batch_loss(videos, idx, rng))
