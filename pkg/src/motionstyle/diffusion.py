"""Topology-shifted stylization diffusion (TSD).

A local-attention denoiser learns the content of one source sequence on its
own skeleton. Each denoising step lifts the content feature into the frozen
canonical space (stage 1), where it forks into two branches: the content
branch decodes the canonical feature straight back through the specific
topology token, the stylization branch applies AdaIN with the prompt's
(mu, sigma) first. Both share the output head. Inference blends the two
canonical features with a weight alpha before the shared decode; alpha=1 is
the plain stylized path.

Global root translation is generated by a separate three-layer temporal
convolution over the denoised rotations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import tensor_ops
from .config import LossWeights, ModelConfig
from .errors import ConfigError, ShapeError
from .skeleton import MotionClip, Skeleton, part_indices
from .style_embedding import (
    StageOneModel,
    StyleEmbedding,
    adain,
    as_rotation_tensor,
)
from .topology_shift import TokenQueryDecoder, TopologyToken

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------

@dataclass
class DiffusionSchedule:
    """Linear-beta DDPM schedule: beta in (0,1), alpha_bar = cumprod(1-beta)."""

    steps: int
    beta: np.ndarray
    alpha_bar: np.ndarray


def build_schedule(steps, beta_start=1e-4, beta_end=0.02) -> DiffusionSchedule:
    """Linear beta interpolation over `steps` denoising steps.

    The desk-scale default step count lives in ModelConfig (100); pass 1000
    for the full-scale schedule.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    beta = np.linspace(beta_start, beta_end, steps)
    alpha_bar = np.cumprod(1.0 - beta)
    return DiffusionSchedule(steps=steps, beta=beta, alpha_bar=alpha_bar)


def q_sample(x0, step, noise, schedule: DiffusionSchedule):
    """Forward-noise x0 to step s: sqrt(ab_s) x0 + sqrt(1 - ab_s) noise."""
    if not 0 <= step < schedule.steps:
        raise IndexError(f"step {step} outside [0, {schedule.steps})")
    ab = float(schedule.alpha_bar[step])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


# ---------------------------------------------------------------------------
# Local attention encoder (content from a single sequence)
# ---------------------------------------------------------------------------

class LocalAttentionLayer(nn.Module):
    """Windowed attention with a learned shared query bank per window.

    Overlapping windows (size `window`, stride `stride`) each run one
    multi-head attention pass where the queries are a learned (window, C)
    bank shared across windows and keys/values are the window's tokens.
    Overlap contributions are averaged back onto positions, so sequence
    length is preserved and the receptive field stays local.
    """

    def __init__(self, channels, heads=4, window=8, stride=4):
        super().__init__()
        if stride < 1 or window < 1:
            raise ConfigError("window and stride must be >= 1")
        self.window = window
        self.stride = stride
        self.queries = nn.Parameter(torch.randn(window, channels) * 0.02)
        self.norm1 = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(
            nn.Linear(channels, 4 * channels),
            nn.GELU(),
            nn.Linear(4 * channels, channels),
        )

    def _window_starts(self, t):
        if t <= self.window:
            return [0]
        starts = list(range(0, t - self.window + 1, self.stride))
        if starts[-1] != t - self.window:
            starts.append(t - self.window)
        return starts

    def forward(self, x):
        """x: (T, C) -> (T, C)."""
        t, c = x.shape
        w = min(self.window, t)
        starts = self._window_starts(t)
        idx = torch.as_tensor(
            [[s + i for i in range(w)] for s in starts], device=x.device
        )  # (W, w)
        h = self.norm1(x)
        kv = h[idx]  # W, w, C
        q = self.queries[:w].unsqueeze(0).expand(len(starts), -1, -1)
        out, _ = self.attn(q, kv, kv, need_weights=False)
        acc = torch.zeros_like(x)
        count = torch.zeros(t, 1, dtype=x.dtype, device=x.device)
        acc = acc.index_add(0, idx.reshape(-1), out.reshape(-1, c))
        count = count.index_add(
            0, idx.reshape(-1), torch.ones(idx.numel(), 1, dtype=x.dtype,
                                           device=x.device)
        )
        x = x + acc / count
        return x + self.ff(self.norm2(x))


class LocalAttentionEncoder(nn.Module):
    def __init__(self, channels, layers=8, heads=4, window=8, stride=4):
        super().__init__()
        self.layers = nn.ModuleList(
            LocalAttentionLayer(channels, heads, window, stride)
            for _ in range(layers)
        )
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


# ---------------------------------------------------------------------------
# The TSD model
# ---------------------------------------------------------------------------

@dataclass
class DenoiseOutput:
    """Both branch predictions plus the stylized canonical feature.

    x0_hat / x0_hat_styled: (T, N, 6); f_x_canon: (N_canonical, T, C);
    translation_hat: (T, 3), generated from the content branch rotations.
    """

    x0_hat: torch.Tensor
    x0_hat_styled: torch.Tensor
    f_x_canon: torch.Tensor
    translation_hat: torch.Tensor


class TsdModel(nn.Module):
    """Two-branch denoiser around a frozen stage-1 canonical space.

    Trainable: the local-attention encoder, the specific topology token,
    the diffusion decoder, the output head, and the translation network.
    The stage-1 submodule (style encoder, canonical decoder, canonical
    token) is frozen at construction and never leaves eval mode.
    """

    def __init__(self, stage1: StageOneModel, skeleton: Skeleton,
                 config: ModelConfig | None = None, fps=30.0):
        super().__init__()
        self.config = config or stage1.config
        if self.config.channels != stage1.config.channels:
            raise ShapeError(
                "TSD channels must match the frozen stage-1 channels"
            )
        self.skeleton = skeleton
        self.fps = fps
        c = self.config.channels
        self.stage1 = stage1
        self.stage1.requires_grad_(False)
        self.stage1.eval()

        self.input_proj = nn.Linear(skeleton.num_joints * 6, c)
        self.step_mlp = nn.Sequential(nn.Linear(c, c), nn.GELU(), nn.Linear(c, c))
        self.encoder = LocalAttentionEncoder(
            c, layers=self.config.diffusion_layers, heads=self.config.heads,
            window=self.config.window, stride=self.config.window_stride,
        )
        self.specific_token = TopologyToken(skeleton, c)
        self.decoder = TokenQueryDecoder(
            c, layers=self.config.decoder_layers, heads=self.config.heads
        )
        self.out_proj = nn.Linear(c, 6)
        self.translation_net = nn.Sequential(
            nn.Conv1d(skeleton.num_joints * 6, c, 3, padding=1,
                      padding_mode="replicate"),
            nn.GELU(),
            nn.Conv1d(c, c, 3, padding=1, padding_mode="replicate"),
            nn.GELU(),
            nn.Conv1d(c, 3, 3, padding=1, padding_mode="replicate"),
        )

    def train(self, mode=True):
        super().train(mode)
        self.stage1.eval()  # frozen submodule never switches modes
        return self

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def _check_input(self, x_s):
        if x_s.dim() != 3 or x_s.shape[1] != self.skeleton.num_joints \
                or x_s.shape[2] != 6:
            raise ShapeError(
                f"noised motion must be (T, {self.skeleton.num_joints}, 6), "
                f"got {tuple(x_s.shape)}"
            )

    def content_feature(self, x_s, step):
        """Noised motion (T, N, 6) + step -> content feature (T, C)."""
        self._check_input(x_s)
        t = x_s.shape[0]
        tokens = self.input_proj(x_s.reshape(t, -1))
        emb = tensor_ops.sinusoidal_embedding(
            [step], tokens.shape[-1], dtype=tokens.dtype, device=tokens.device
        )
        return self.encoder(tokens + self.step_mlp(emb))

    def canonical_features(self, x_s, step, style: StyleEmbedding, f_p=None):
        """Lift to canonical space; returns (plain, stylized) features.

        `f_p` overrides the token fed to the frozen canonical decoder
        (defaults to style.f_p); AdaIN always uses style.mu / style.sigma.
        Keeping the two inputs separable lets callers probe branch
        isolation.
        """
        if style.f_p.shape[-1] != self.config.channels:
            raise ShapeError(
                f"style token has {style.f_p.shape[-1]} channels, "
                f"model expects {self.config.channels}"
            )
        f_x = self.content_feature(x_s, step)
        cond = style.f_p if f_p is None else f_p
        f_canon = self.stage1.decode_canonical(f_x, cond)
        f_styled = adain(f_canon, style.mu, style.sigma,
                         eps=self.config.adain_eps)
        return f_canon, f_styled

    def decode_feature(self, f_canon):
        """Canonical feature (N_canonical, T, C) -> motion (T, N, 6)."""
        n_omega, t, c = f_canon.shape
        if self.config.decoder_positional_encoding:
            pe = tensor_ops.sinusoidal_embedding(
                torch.arange(t), c, dtype=f_canon.dtype, device=f_canon.device
            )
            f_canon = f_canon + pe.unsqueeze(0)
        memory = f_canon.permute(1, 0, 2)  # T, N_canonical, C
        queries = self.specific_token.refine().unsqueeze(0).expand(t, -1, -1)
        return self.out_proj(self.decoder(queries, memory))

    def predict_translation(self, rotations):
        """Denoised rotations (T, N, 6) -> root translation (T, 3)."""
        self._check_input(rotations)
        t = rotations.shape[0]
        x = rotations.reshape(t, -1).t().unsqueeze(0)  # 1, N*6, T
        return self.translation_net(x).squeeze(0).t()

    def denoise(self, x_s, step, style: StyleEmbedding, f_p=None) -> DenoiseOutput:
        """One denoiser evaluation: both branch predictions for step s."""
        f_canon, f_styled = self.canonical_features(x_s, step, style, f_p)
        x0_hat = self.decode_feature(f_canon)
        x0_hat_styled = self.decode_feature(f_styled)
        return DenoiseOutput(
            x0_hat=x0_hat,
            x0_hat_styled=x0_hat_styled,
            f_x_canon=f_styled,
            translation_hat=self.predict_translation(x0_hat),
        )


def denoise(model: TsdModel, x_s, step, style, f_p=None) -> DenoiseOutput:
    """Functional form of TsdModel.denoise."""
    return model.denoise(x_s, step, style, f_p=f_p)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def tsd_losses(out: DenoiseOutput, x0_clip: MotionClip, prompt_clip: MotionClip,
               f_p, stage1: StageOneModel, skeleton: Skeleton,
               weights: LossWeights | None = None):
    """Content, energy, and style losses for one denoiser output.

    content: element-mean squared error of the content branch against the
    true motion, rotations and translation channels both.
    energy: squared error between five-part grouped rotations of the
    stylized branch and of the prompt resampled to the generated length
    (each grouped under its own skeleton's part map).
    style: squared error between the prompt style token and the style
    encoding of the stylized canonical feature pushed through the frozen
    reconstruction head.

    Returns a dict with con / eng / sty / total torch scalars.
    """
    weights = weights or LossWeights()
    dtype = out.x0_hat.dtype
    device = out.x0_hat.device

    x0 = as_rotation_tensor(x0_clip, dtype=dtype, device=device)
    trans0 = torch.as_tensor(x0_clip.translation, dtype=dtype, device=device)
    con = torch.nn.functional.mse_loss(out.x0_hat, x0) \
        + torch.nn.functional.mse_loss(out.translation_hat, trans0)

    prompt = as_rotation_tensor(prompt_clip, dtype=dtype, device=device)
    t_out = out.x0_hat_styled.shape[0]
    prompt_aligned = tensor_ops.resample_features(prompt, t_out)
    grouped_prompt = tensor_ops.group_by_parts(
        prompt_aligned, part_indices(stage1.skeleton)
    )
    grouped_pred = tensor_ops.group_by_parts(
        out.x0_hat_styled, part_indices(skeleton)
    )
    eng = torch.nn.functional.mse_loss(grouped_pred, grouped_prompt)

    recon = stage1.reconstruct(out.f_x_canon)
    f_recon, _ = stage1.encoder(recon)
    f_p = torch.as_tensor(f_p, dtype=dtype, device=device).reshape(1, -1)
    sty = torch.nn.functional.mse_loss(f_recon, f_p)

    total = con + weights.nu_eng * eng + weights.nu_sty * sty
    return {"con": con, "eng": eng, "sty": sty, "total": total}


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample(model, schedule: DiffusionSchedule, length, style: StyleEmbedding,
           alpha=1.0, seed=0, stochastic=False, f_p=None) -> MotionClip:
    """Generate a stylized clip by iterative denoising.

    x0-parameterization: each step the model predicts clean motion from the
    blended canonical feature (1-alpha) * plain + alpha * stylized, and the
    DDPM posterior mean carries the chain to the next step. Deterministic
    (zero posterior noise) unless stochastic=True; alpha=0 / alpha=1
    reproduce the content / stylization branch exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    param = next(model.parameters())
    generator = torch.Generator().manual_seed(int(seed))
    x = torch.randn(
        length, model.skeleton.num_joints, 6, generator=generator
    ).to(dtype=param.dtype, device=param.device)

    with torch.no_grad():
        for s in reversed(range(schedule.steps)):
            f_canon, f_styled = model.canonical_features(x, s, style, f_p)
            if alpha == 0.0:
                blended = f_canon
            elif alpha == 1.0:
                blended = f_styled
            else:
                blended = (1.0 - alpha) * f_canon + alpha * f_styled
            x0 = model.decode_feature(blended)
            if s == 0:
                x = x0
                break
            ab_t = float(schedule.alpha_bar[s])
            ab_prev = float(schedule.alpha_bar[s - 1])
            beta = float(schedule.beta[s])
            mean = (
                math.sqrt(ab_prev) * beta / (1.0 - ab_t) * x0
                + math.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t) * x
            )
            if stochastic:
                var = (1.0 - ab_prev) / (1.0 - ab_t) * beta
                noise = torch.randn(x.shape, generator=generator).to(
                    dtype=x.dtype, device=x.device
                )
                mean = mean + math.sqrt(var) * noise
            x = mean
        translation = model.predict_translation(x)

    return MotionClip(
        x.cpu().double().numpy(),
        translation.cpu().double().numpy(),
        fps=model.fps,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def prompt_style(stage1: StageOneModel, prompt_clip) -> StyleEmbedding:
    """Frozen style embedding of a canonical prompt clip (detached)."""
    with torch.no_grad():
        f_p, _ = stage1.encode_style(prompt_clip)
        mu, sigma = stage1.embed_style(f_p)
    return StyleEmbedding(f_p=f_p, mu=mu, sigma=sigma)


def train_tsd(model: TsdModel, schedule: DiffusionSchedule,
              source_clip: MotionClip, prompt_clip: MotionClip,
              weights=None, steps=2000, lr=1e-3, seed=0, log_every=200):
    """Single-sequence TSD training loop; deterministic per seed.

    Each step noises the source to a random schedule step, denoises, and
    optimizes content + energy + style losses over the trainable parameters
    only. Returns the per-step total-loss history.
    """
    torch.manual_seed(seed)
    param = next(model.parameters())
    x0 = as_rotation_tensor(source_clip, dtype=param.dtype, device=param.device)
    style = prompt_style(model.stage1, prompt_clip)
    optimizer = torch.optim.Adam(model.trainable_parameters(), lr=lr)
    rng = torch.Generator().manual_seed(seed)
    history = []
    model.train()
    for step in range(steps):
        s = int(torch.randint(0, schedule.steps, (1,), generator=rng))
        noise = torch.randn(x0.shape, generator=rng).to(
            dtype=x0.dtype, device=x0.device
        )
        x_s = q_sample(x0, s, noise, schedule)
        out = model.denoise(x_s, s, style)
        losses = tsd_losses(
            out, source_clip, prompt_clip, style.f_p, model.stage1,
            model.skeleton, weights,
        )
        optimizer.zero_grad()
        losses["total"].backward()
        optimizer.step()
        history.append(float(losses["total"].detach()))
        if log_every and step % log_every == 0:
            log.info(
                "tsd step %d: total %.5f con %.5f eng %.5f sty %.5f",
                step, history[-1], float(losses["con"].detach()),
                float(losses["eng"].detach()), float(losses["sty"].detach()),
            )
    model.eval()
    return history
