"""Unsupervised latent-action discovery over pretrained features.

A predictor maps consecutive feature pairs to a continuous latent action,
which is discretized by a grouped vector quantizer (straight-through
gradients) before a world model reconstructs the next feature from it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DatasetError, NumericError
from .nets import (FEATURE_DIM, LATENT_ACTION_DIM, LatentActionPredictor,
                   WorldModel, obs_to_tensor)

log = logging.getLogger(__name__)


@dataclass
class QuantizeResult:
    z_vq: torch.Tensor            # (B, latent_dim) after the out-projection
    indices: torch.Tensor         # (B, groups) int64
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor
    perplexity: float
    pre_q: torch.Tensor           # (B, groups, embed_dim) before quantization
    quantized_pre: torch.Tensor   # same shape, straight-through values


class GroupedVectorQuantizer(nn.Module):
    """Grouped nearest-neighbor quantizer with straight-through gradients.

    The continuous latent action is projected to ``groups * embed_dim``,
    split per group, snapped to each group's nearest embedding (squared
    Euclidean distance, lowest index wins ties) and projected back.
    """

    def __init__(self, latent_dim: int = LATENT_ACTION_DIM, groups: int = 4,
                 entries: int = 64, embed_dim: int = 16,
                 commitment: float = 0.25):
        super().__init__()
        if groups < 1 or entries < 2 or embed_dim < 1:
            raise ConfigurationError("invalid codebook shape")
        self.groups = groups
        self.entries = entries
        self.embed_dim = embed_dim
        self.commitment = commitment
        self.proj_in = nn.Linear(latent_dim, groups * embed_dim)
        self.proj_out = nn.Linear(groups * embed_dim, latent_dim)
        self.embeddings = nn.Parameter(
            torch.empty(groups, entries, embed_dim).uniform_(-1.0 / entries,
                                                             1.0 / entries))
        # bookkeeping for dead-code reinitialization
        self.register_buffer("last_used", torch.zeros(groups, entries,
                                                      dtype=torch.long))
        self.register_buffer("step_count", torch.zeros((), dtype=torch.long))

    def forward(self, z: torch.Tensor) -> QuantizeResult:
        if not torch.isfinite(z).all():
            raise NumericError("non-finite latent action")
        b = z.shape[0]
        h = self.proj_in(z).view(b, self.groups, self.embed_dim)
        # squared distances (B, G, K)
        diff = h.unsqueeze(2) - self.embeddings.unsqueeze(0)
        dist = diff.pow(2).sum(dim=-1)
        indices = dist.argmin(dim=-1)
        e = torch.gather(
            self.embeddings.unsqueeze(0).expand(b, -1, -1, -1), 2,
            indices[..., None, None].expand(-1, -1, 1, self.embed_dim),
        ).squeeze(2)
        codebook_loss = F.mse_loss(h.detach(), e)
        commitment_loss = F.mse_loss(h, e.detach())
        # straight-through: forward value is exactly e, gradient passes to h
        h_q = e.detach() + (h - h.detach())
        z_vq = self.proj_out(h_q.flatten(1))
        return QuantizeResult(z_vq, indices, codebook_loss, commitment_loss,
                              self._perplexity(indices), h, h_q)

    @staticmethod
    def _perplexity(indices: torch.Tensor) -> float:
        """Exponentiated entropy of the empirical index-tuple usage."""
        _, counts = torch.unique(indices, dim=0, return_counts=True)
        p = counts.double() / indices.shape[0]
        return float(torch.exp(-(p * p.log()).sum()))

    @torch.no_grad()
    def note_usage(self, result: QuantizeResult, dead_steps: int) -> int:
        """Track per-entry usage; reinit entries dead for ``dead_steps`` steps.

        Dead entries are moved onto random pre-quantization sub-vectors from
        the current batch. Returns the number of reinitialized entries.
        """
        self.step_count += 1
        for g in range(self.groups):
            used = torch.unique(result.indices[:, g])
            self.last_used[g, used] = self.step_count
        dead = (self.step_count - self.last_used) >= dead_steps
        n_dead = int(dead.sum())
        if n_dead:
            flat = result.pre_q.detach()
            for g in range(self.groups):
                for k in torch.nonzero(dead[g]).flatten():
                    pick = torch.randint(flat.shape[0], (1,))
                    self.embeddings[g, k] = flat[pick, g]
                    self.last_used[g, k] = self.step_count
        return n_dead


def vq_quantize(cb: GroupedVectorQuantizer, z: torch.Tensor) -> QuantizeResult:
    """Quantize a batch of continuous latent actions."""
    return cb(z)


@dataclass
class LatentActionConfig:
    update_count: int = 2000
    batch_size: int = 256
    lr_predictor: float = 3e-4
    lr_world_model: float = 3e-4
    commitment: float = 0.25
    groups: int = 4
    entries: int = 64
    embed_dim: int = 16
    latent_dim: int = LATENT_ACTION_DIM
    parallel_codebooks: int = 1
    dead_code_steps: int = 2000
    use_vq: bool = True
    finetune_encoder: bool = False
    encoder_lr: float = 3e-5
    seed: int = 0

    def __post_init__(self):
        if self.update_count < 0 or self.batch_size < 1:
            raise ConfigurationError("invalid training budget")
        if min(self.lr_predictor, self.lr_world_model) <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.parallel_codebooks < 1:
            raise ConfigurationError("parallel_codebooks must be >= 1")


class ParallelQuantizer(nn.Module):
    """Average of independent quantizers over the same latent action."""

    def __init__(self, n: int, **kwargs):
        super().__init__()
        self.quantizers = nn.ModuleList(
            GroupedVectorQuantizer(**kwargs) for _ in range(n))

    def forward(self, z: torch.Tensor) -> QuantizeResult:
        results = [q(z) for q in self.quantizers]
        self._last_results = results
        n = len(results)
        return QuantizeResult(
            z_vq=sum(r.z_vq for r in results) / n,
            indices=torch.cat([r.indices for r in results], dim=1),
            codebook_loss=sum(r.codebook_loss for r in results) / n,
            commitment_loss=sum(r.commitment_loss for r in results) / n,
            perplexity=float(np.mean([r.perplexity for r in results])),
            pre_q=results[0].pre_q,
            quantized_pre=results[0].quantized_pre,
        )

    @torch.no_grad()
    def note_usage(self, result: QuantizeResult, dead_steps: int) -> int:
        return sum(q.note_usage(r, dead_steps)
                   for q, r in zip(self.quantizers, self._last_results))


def make_quantizer(cfg: LatentActionConfig) -> nn.Module:
    kwargs = dict(latent_dim=cfg.latent_dim, groups=cfg.groups,
                  entries=cfg.entries, embed_dim=cfg.embed_dim,
                  commitment=cfg.commitment)
    if cfg.parallel_codebooks == 1:
        return GroupedVectorQuantizer(**kwargs)
    return ParallelQuantizer(cfg.parallel_codebooks, **kwargs)


def latent_action_pretrain_loss(s: torch.Tensor, s_next: torch.Tensor,
                                p: LatentActionPredictor, cb, w: WorldModel,
                                use_vq: bool = True):
    """Next-feature reconstruction plus VQ auxiliary terms.

    Returns (total loss, QuantizeResult or None).
    """
    if s.shape[0] == 0:
        raise DatasetError("empty batch")
    z = p(s, s_next)
    if use_vq:
        q = cb(z)
        recon = F.mse_loss(w(s, q.z_vq), s_next)
        return recon + q.codebook_loss + cb_commitment(cb) * q.commitment_loss, q
    recon = F.mse_loss(w(s, z), s_next)
    return recon, None


def cb_commitment(cb) -> float:
    if isinstance(cb, ParallelQuantizer):
        return cb.quantizers[0].commitment
    return cb.commitment


def copy_collapse_r2(z: torch.Tensor, s_next: torch.Tensor) -> float:
    """R^2 of a least-squares fit z ~ s_next; near 1 means p just copies."""
    zc = z - z.mean(0)
    sc = s_next - s_next.mean(0)
    sol = torch.linalg.lstsq(sc, zc).solution
    resid = zc - sc @ sol
    denom = zc.pow(2).sum()
    if float(denom) == 0.0:
        return 1.0
    return float(1.0 - resid.pow(2).sum() / denom)


class LatentActionLearner:
    """Fits predictor, quantizer and world model on video feature pairs.

    After ``fit``: ``predictor_``, ``quantizer_``, ``world_model_``,
    ``loss_history_``, ``perplexity_history_``.
    """

    def __init__(self, cfg: LatentActionConfig):
        self.cfg = cfg

    def get_params(self) -> dict:
        return dict(vars(self.cfg))

    def fit(self, videos, encoder) -> "LatentActionLearner":
        cfg = self.cfg
        torch.manual_seed(cfg.seed + 1)
        feature_dim = encoder.feature_dim
        self.predictor_ = LatentActionPredictor(feature_dim, cfg.latent_dim)
        self.world_model_ = WorldModel(feature_dim, cfg.latent_dim)
        self.quantizer_ = make_quantizer(cfg)
        groups = [
            {"params": self.predictor_.parameters(), "lr": cfg.lr_predictor},
            {"params": self.world_model_.parameters(),
             "lr": cfg.lr_world_model},
            {"params": self.quantizer_.parameters(), "lr": cfg.lr_predictor},
        ]
        if cfg.finetune_encoder:
            groups.append({"params": encoder.parameters(),
                           "lr": cfg.encoder_lr})
        self.optimizer_ = torch.optim.Adam(groups)

        pairs = videos.pair_indices()
        if len(pairs) == 0:
            raise DatasetError("no in-episode frame pairs")
        feats = None
        if not cfg.finetune_encoder:
            feats = encode_frames(encoder, videos.frames)
        rng = np.random.default_rng(cfg.seed + 1)
        self.loss_history_, self.perplexity_history_ = [], []
        for _ in range(cfg.update_count):
            idx = rng.choice(pairs, size=cfg.batch_size)
            if feats is not None:
                s, s_next = feats[idx], feats[idx + 1]
            else:
                dtype = next(encoder.parameters()).dtype
                s = encoder(obs_to_tensor(videos.frames[idx], dtype=dtype))
                s_next = encoder(obs_to_tensor(videos.frames[idx + 1],
                                               dtype=dtype))
            loss, q = latent_action_pretrain_loss(
                s, s_next, self.predictor_, self.quantizer_,
                self.world_model_, cfg.use_vq)
            self.optimizer_.zero_grad()
            loss.backward()
            self.optimizer_.step()
            self.loss_history_.append(float(loss.detach()))
            if q is not None:
                self.perplexity_history_.append(q.perplexity)
                self.quantizer_.note_usage(q, cfg.dead_code_steps)
            else:
                with torch.no_grad():
                    z = self.predictor_(s, s_next)
                    if copy_collapse_r2(z, s_next) > 0.99:
                        log.warning("latent action predictor appears to copy "
                                    "the next feature (R^2 > 0.99)")
        return self


@torch.no_grad()
def encode_frames(encoder, frames: np.ndarray,
                  batch: int = 256) -> torch.Tensor:
    """Encode a uint8 frame array to a feature matrix in batches."""
    dtype = next(encoder.parameters()).dtype
    outs = []
    for i in range(0, len(frames), batch):
        outs.append(encoder(obs_to_tensor(frames[i:i + batch], dtype=dtype)))
    return torch.cat(outs)
