"""Online stage: collect reward-free transitions, finetune and decode latent
actions against real action labels, and clone the latent policy from videos.

The cycle order follows the two-stage schedule: an optional behavior-cloning
warm start, a random-policy first collection round, then repeated
collect / finetune / clone cycles until the interaction budget is spent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .envs import EnvConfig, evaluate_policy, make_env
from .errors import ConfigurationError, DatasetError
from .latentact import cb_commitment, encode_frames
from .nets import ActionDecoder, LatentPolicy, obs_to_tensor

STOCHASTIC_COLLECT = "stochastic_collect"
DETERMINISTIC_EVAL = "deterministic_eval"


@dataclass(frozen=True)
class Transition:
    """Environmental experience; rewards are never stored for the learner."""
    obs: np.ndarray
    action: object
    next_obs: np.ndarray


class ReplayBuffer:
    """Append-only uniform-sampling store of transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.obs: list[np.ndarray] = []
        self.actions: list = []
        self.next_obs: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.obs)

    def add(self, tr: Transition) -> None:
        if len(self.obs) >= self.capacity:
            raise ConfigurationError("replay buffer over capacity")
        self.obs.append(tr.obs)
        self.actions.append(tr.action)
        self.next_obs.append(tr.next_obs)

    def sample_indices(self, batch: int, rng: np.random.Generator,
                       recent: int = 0):
        """Uniform indices; ``recent > 0`` restricts sampling to the newest
        ``recent`` transitions so learning tracks the current policy's
        state distribution."""
        if len(self.obs) == 0:
            raise DatasetError("empty replay buffer")
        lo = max(0, len(self.obs) - recent) if recent > 0 else 0
        return rng.integers(lo, len(self.obs), size=batch)


class PolicyBundle:
    """Encoder, latent policy and action decoder chained into a policy."""

    def __init__(self, encoder, policy: LatentPolicy, decoder: ActionDecoder,
                 mode: str = DETERMINISTIC_EVAL):
        if policy.net[0].in_features != encoder.feature_dim:
            raise ConfigurationError("encoder/policy feature dims differ")
        if decoder.net[0].in_features != policy.net[-1].out_features:
            raise ConfigurationError("policy/decoder latent dims differ")
        self.encoder = encoder
        self.policy = policy
        self.decoder = decoder
        self.mode = mode

    @torch.no_grad()
    def _decoder_output(self, obs) -> torch.Tensor:
        dtype = next(self.encoder.parameters()).dtype
        s = self.encoder(obs_to_tensor(obs, dtype=dtype))
        return self.decoder(self.policy(s))[0]

    def predict(self, obs):
        """Deterministic evaluation action (argmax / noiseless)."""
        out = self._decoder_output(obs)
        if self.decoder.discrete:
            return int(out.argmax())
        return out.numpy().astype(np.float64)

    def act(self, obs, rng: np.random.Generator, noise: float = 0.1):
        """Collection action: softmax sample (discrete) or Gaussian noise."""
        if self.mode == DETERMINISTIC_EVAL:
            return self.predict(obs)
        out = self._decoder_output(obs)
        if self.decoder.discrete:
            probs = F.softmax(out, dim=-1).numpy().astype(np.float64)
            probs /= probs.sum()
            return int(rng.choice(len(probs), p=probs))
        a = out.numpy().astype(np.float64) + rng.normal(0.0, noise, out.shape)
        return np.clip(a, -1.0, 1.0)


def decode_action(d: ActionDecoder, z: torch.Tensor) -> torch.Tensor:
    """Logits for discrete actions, tanh-squashed values for continuous."""
    return d(z)


def finetune_loss(s: torch.Tensor, s_next: torch.Tensor, actions,
                  p, cb, w, d: ActionDecoder, beta: float,
                  discrete: bool):
    """Action prediction plus dynamics-constrained future reconstruction.

    Returns (loss, QuantizeResult); VQ auxiliary terms are the trainer's
    responsibility so this scalar matches the decoding objective exactly.
    """
    if s.shape[0] == 0:
        raise DatasetError("empty batch")
    z = p(s, s_next)
    q = cb(z)
    out = d(z)
    if discrete:
        labels = torch.as_tensor(actions, dtype=torch.long)
        if labels.min() < 0 or labels.max() >= d.n_actions:
            raise ConfigurationError("action label out of range")
        action_loss = F.cross_entropy(out, labels)
    else:
        target = torch.as_tensor(np.asarray(actions), dtype=out.dtype)
        action_loss = F.mse_loss(out, target)
    wm_loss = F.mse_loss(w(s, q.z_vq), s_next)
    return action_loss + beta * wm_loss, q


def bc_loss(s: torch.Tensor, s_next: torch.Tensor, p, policy: LatentPolicy,
            cb=None) -> torch.Tensor:
    """Mean squared error between the policy's latent action and the
    predictor's (stop-gradient) latent action for the same feature pair."""
    if s.shape[0] == 0:
        raise DatasetError("empty batch")
    with torch.no_grad():
        z_target = p(s, s_next)
        if cb is not None:  # optional quantized-target variant
            z_target = cb(z_target).z_vq
    return F.mse_loss(policy(s), z_target)


def warm_start_bc(video_feats: torch.Tensor, pair_indices: np.ndarray,
                  p, policy: LatentPolicy, optimizer, cap: int,
                  plateau_tol: float = 1e-3, batch_size: int = 256,
                  rng: np.random.Generator | None = None,
                  window: int = 500, cb=None) -> list[float]:
    """Clone the latent policy until the loss plateaus or ``cap`` updates.

    Convergence: relative improvement of the mean loss over the latest
    ``window`` updates versus the previous window falls below
    ``plateau_tol``.
    """
    rng = rng or np.random.default_rng(0)
    history: list[float] = []
    prev_window = None
    for step in range(cap):
        idx = rng.choice(pair_indices, size=batch_size)
        loss = bc_loss(video_feats[idx], video_feats[idx + 1], p, policy, cb)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))
        if (step + 1) % window == 0:
            cur = float(np.mean(history[-window:]))
            if prev_window is not None:
                rel = (prev_window - cur) / max(abs(prev_window), 1e-12)
                if rel < plateau_tol:
                    break
            prev_window = cur
    return history


@dataclass
class OnlineConfig:
    total_steps: int = 20000          # I_ft, environment interaction budget
    collect_per_cycle: int = 1000     # F_ft
    finetune_updates: int = 150       # U_ft
    bc_updates: int = 300             # U_bc
    warm_start_cap: int = 5000
    plateau_tol: float = 1e-3
    beta: float = 15.0
    lr_decoder: float = 1e-3
    lr_predictor_ft: float = 1e-4
    lr_policy: float = 1e-3
    lr_world_model_ft: float = 1e-5
    finetune_world_model: bool = False
    batch_size: int = 256
    bc_batch_size: int = 256
    collect_noise: float = 0.1
    replay_recent: int = 0            # 0 = uniform over the whole buffer
    eval_every_cycles: int = 0        # 0 disables periodic evaluation
    eval_episodes: int = 20
    warm_start: bool = True
    quantized_bc_targets: bool = False
    freeze_predictor: bool = False    # ablation: only the decoder adapts
    train_encoder: bool = False       # ablation: no feature pretraining
    encoder_lr: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1 or self.collect_per_cycle < 1:
            raise ConfigurationError("invalid interaction budget")
        if self.total_steps % self.collect_per_cycle != 0:
            raise ConfigurationError(
                "collect_per_cycle must divide total_steps")
        for lr in (self.lr_decoder, self.lr_policy, self.lr_predictor_ft):
            if lr <= 0:
                raise ConfigurationError("learning rates must be positive")


class OnlineImitator:
    """Runs the online collect / finetune / clone schedule.

    After ``fit``: ``bundle_`` (the executable policy), ``buffer_``,
    ``metrics_`` (one row per cycle).
    """

    def __init__(self, cfg: OnlineConfig):
        self.cfg = cfg

    def get_params(self) -> dict:
        return dict(vars(self.cfg))

    # -- setup ---------------------------------------------------------------

    def setup(self, env_cfg: EnvConfig, videos, encoder, predictor,
              quantizer, world_model) -> "OnlineImitator":
        cfg = self.cfg
        torch.manual_seed(cfg.seed + 2)
        self.env_cfg = env_cfg
        self.env = make_env(env_cfg)
        self.videos = videos
        self.encoder = encoder
        self.predictor = predictor
        self.quantizer = quantizer
        self.world_model = world_model
        self.discrete = env_cfg.discrete
        out_dim = env_cfg.n_actions if self.discrete else env_cfg.action_dim
        latent_dim = predictor.latent_dim
        self.decoder = ActionDecoder(latent_dim, out_dim, self.discrete)
        self.policy = LatentPolicy(encoder.feature_dim, latent_dim)
        self.bundle_ = PolicyBundle(encoder, self.policy, self.decoder,
                                    mode=STOCHASTIC_COLLECT)
        self.buffer_ = ReplayBuffer(cfg.total_steps)
        self.rng = np.random.default_rng(cfg.seed + 2)
        self.metrics_: list[dict] = []

        for prm in self.encoder.parameters():
            prm.requires_grad_(cfg.train_encoder)
        for prm in self.world_model.parameters():
            prm.requires_grad_(cfg.finetune_world_model)
        for prm in self.predictor.parameters():
            prm.requires_grad_(not cfg.freeze_predictor)
        for prm in self.quantizer.parameters():
            prm.requires_grad_(not cfg.freeze_predictor)

        ft_groups = [{"params": self.decoder.parameters(),
                      "lr": cfg.lr_decoder}]
        if not cfg.freeze_predictor:
            ft_groups.append({"params": self.predictor.parameters(),
                              "lr": cfg.lr_predictor_ft})
            ft_groups.append({"params": self.quantizer.parameters(),
                              "lr": cfg.lr_predictor_ft})
        if cfg.finetune_world_model:
            ft_groups.append({"params": self.world_model.parameters(),
                              "lr": cfg.lr_world_model_ft})
        if cfg.train_encoder:
            ft_groups.append({"params": self.encoder.parameters(),
                              "lr": cfg.encoder_lr})
        self.ft_optimizer = torch.optim.Adam(ft_groups)
        self.bc_optimizer = torch.optim.Adam(self.policy.parameters(),
                                             lr=cfg.lr_policy)

        self.video_pairs = videos.pair_indices()
        self.video_feats = (None if cfg.train_encoder
                            else encode_frames(encoder, videos.frames))
        # feature cache for buffer entries (frozen-encoder fast path)
        self._feat_cache: list[torch.Tensor] = []
        self._episode_state = None
        self._episode_seed = cfg.seed * 1_000_003 + 500_000
        self.cycles_done = 0
        self.env_steps = 0
        self._warm_started = False
        return self

    # -- helpers ---------------------------------------------------------------

    def _video_batch_feats(self, idx):
        if self.video_feats is not None:
            return self.video_feats[idx], self.video_feats[idx + 1]
        dtype = next(self.encoder.parameters()).dtype
        s = self.encoder(obs_to_tensor(self.videos.frames[idx], dtype=dtype))
        s_next = self.encoder(obs_to_tensor(self.videos.frames[idx + 1],
                                            dtype=dtype))
        return s, s_next

    def _buffer_batch(self, idx):
        dtype = next(self.encoder.parameters()).dtype
        if not self.cfg.train_encoder:
            feats = torch.stack([self._feat_cache[i] for i in idx])
            s, s_next = feats[:, 0], feats[:, 1]
        else:
            obs = np.stack([self.buffer_.obs[i] for i in idx])
            nxt = np.stack([self.buffer_.next_obs[i] for i in idx])
            s = self.encoder(obs_to_tensor(obs, dtype=dtype))
            s_next = self.encoder(obs_to_tensor(nxt, dtype=dtype))
        actions = [self.buffer_.actions[i] for i in idx]
        return s, s_next, actions

    @torch.no_grad()
    def _cache_features(self, tr: Transition) -> None:
        if self.cfg.train_encoder:
            return
        dtype = next(self.encoder.parameters()).dtype
        both = np.stack([tr.obs, tr.next_obs])
        self._feat_cache.append(self.encoder(obs_to_tensor(both, dtype=dtype)))

    def _collect(self, n_steps: int, random_policy: bool) -> None:
        env = self.env
        for _ in range(n_steps):
            if self._episode_state is None or self._episode_state.done:
                self._episode_state, self._episode_obs = env.reset(
                    self._episode_seed)
                self._episode_seed += 1
            obs = self._episode_obs
            if random_policy:
                if self.discrete:
                    action = int(self.rng.integers(0, self.env_cfg.n_actions))
                else:
                    action = self.rng.uniform(-1, 1, self.env_cfg.action_dim)
            else:
                action = self.bundle_.act(obs, self.rng,
                                          self.cfg.collect_noise)
            state, next_obs, done, _unused = env.step(self._episode_state,
                                                      action)
            tr = Transition(obs, action, next_obs)
            self.buffer_.add(tr)
            self._cache_features(tr)
            self._episode_state, self._episode_obs = state, next_obs
            self.env_steps += 1

    def _warm_start(self) -> None:
        cfg = self.cfg
        if not cfg.warm_start or cfg.warm_start_cap == 0:
            self._warm_started = True
            return
        if self.video_feats is not None:
            warm_start_bc(self.video_feats, self.video_pairs, self.predictor,
                          self.policy, self.bc_optimizer, cfg.warm_start_cap,
                          cfg.plateau_tol, cfg.bc_batch_size, self.rng,
                          cb=self.quantizer if cfg.quantized_bc_targets
                          else None)
        else:
            for _ in range(min(cfg.warm_start_cap, 2000)):
                self._bc_update()
        self._warm_started = True

    def _bc_update(self) -> float:
        idx = self.rng.choice(self.video_pairs, size=self.cfg.bc_batch_size)
        s, s_next = self._video_batch_feats(idx)
        if self.cfg.train_encoder:
            s, s_next = s.detach(), s_next.detach()
        loss = bc_loss(s, s_next, self.predictor, self.policy,
                       self.quantizer if self.cfg.quantized_bc_targets
                       else None)
        self.bc_optimizer.zero_grad()
        loss.backward()
        self.bc_optimizer.step()
        return float(loss.detach())

    def _finetune_update(self) -> tuple[float, float]:
        cfg = self.cfg
        idx = self.buffer_.sample_indices(cfg.batch_size, self.rng,
                                          cfg.replay_recent)
        s, s_next, actions = self._buffer_batch(idx)
        loss, q = finetune_loss(s, s_next, actions, self.predictor,
                                self.quantizer, self.world_model,
                                self.decoder, cfg.beta, self.discrete)
        total = loss
        if not cfg.freeze_predictor:
            total = total + q.codebook_loss \
                + cb_commitment(self.quantizer) * q.commitment_loss
        self.ft_optimizer.zero_grad()
        total.backward()
        self.ft_optimizer.step()
        return float(loss.detach()), q.perplexity

    # -- main loop -------------------------------------------------------------

    def run_cycle(self) -> dict:
        cfg = self.cfg
        cycle = self.cycles_done
        if cycle == 0 and not self._warm_started:
            self._warm_start()
        self._collect(cfg.collect_per_cycle, random_policy=(cycle == 0))
        ft_losses, perps = [], []
        for _ in range(cfg.finetune_updates):
            l, perp = self._finetune_update()
            ft_losses.append(l)
            perps.append(perp)
        bc_losses = [self._bc_update() for _ in range(cfg.bc_updates)]
        self.cycles_done += 1
        row = {
            "env_steps": self.env_steps,
            "l_ft": float(np.mean(ft_losses)) if ft_losses else float("nan"),
            "l_bc": float(np.mean(bc_losses)) if bc_losses else float("nan"),
            "perplexity": float(np.mean(perps)) if perps else float("nan"),
            "eval_success": float("nan"),
            "eval_return": float("nan"),
        }
        if cfg.eval_every_cycles and self.cycles_done % cfg.eval_every_cycles == 0:
            stats = self.evaluate(cfg.eval_episodes)
            row["eval_success"] = stats["success_rate"]
            row["eval_return"] = stats["mean_return"]
        self.metrics_.append(row)
        return row

    def fit(self, env_cfg: EnvConfig, videos, encoder, predictor, quantizer,
            world_model) -> "OnlineImitator":
        self.setup(env_cfg, videos, encoder, predictor, quantizer,
                   world_model)
        n_cycles = self.cfg.total_steps // self.cfg.collect_per_cycle
        for _ in range(n_cycles):
            self.run_cycle()
        return self

    def fit_offline(self, env_cfg: EnvConfig, videos, transitions,
                    encoder, predictor, quantizer,
                    world_model) -> "OnlineImitator":
        """Offline variant: finetune on pre-labeled expert transitions.

        No environment interaction happens; the usual number of cycles is
        run against a fixed buffer of (obs, action, next_obs) triples.
        """
        self.setup(env_cfg, videos, encoder, predictor, quantizer,
                   world_model)
        self.buffer_ = ReplayBuffer(len(transitions))
        for tr in transitions:
            self.buffer_.add(tr)
            self._cache_features(tr)
        self._warm_start()
        n_cycles = self.cfg.total_steps // self.cfg.collect_per_cycle
        for _ in range(n_cycles):
            ft_losses, perps = [], []
            for _ in range(self.cfg.finetune_updates):
                l, perp = self._finetune_update()
                ft_losses.append(l)
                perps.append(perp)
            bc_losses = [self._bc_update()
                         for _ in range(self.cfg.bc_updates)]
            self.cycles_done += 1
            self.metrics_.append({
                "env_steps": 0,
                "l_ft": float(np.mean(ft_losses)),
                "l_bc": float(np.mean(bc_losses)),
                "perplexity": float(np.mean(perps)),
                "eval_success": float("nan"),
                "eval_return": float("nan"),
            })
        return self

    def evaluate(self, n_episodes: int, seed: int = 9_000_000) -> dict:
        """Deterministic evaluation; episodes never enter the buffer."""
        bundle = PolicyBundle(self.encoder, self.policy, self.decoder,
                              mode=DETERMINISTIC_EVAL)
        return evaluate_policy(bundle, self.env_cfg, n_episodes, seed)
