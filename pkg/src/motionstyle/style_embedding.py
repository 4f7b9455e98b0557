"""Stage 1: the canonical-space style autoencoder.

A transformer encoder splits a canonical-skeleton motion into a one-token
style feature and a per-frame content feature. The canonical decoder then
re-expresses {content, repeated style} under the canonical topology token,
AdaIN transplants the style statistics, and a linear head reconstructs the
motion. Training aligns the style token with externally supplied text and
image embeddings (cosine) while reconstructing rotations, FK positions and
velocities.

After pre-training the whole model is frozen and reused inside the
diffusion stage.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import tensor_ops
from .config import LossWeights, ModelConfig
from .errors import ConfigError, ShapeError, TopologyError
from .skeleton import MotionClip, Skeleton
from .topology_shift import TokenQueryDecoder, TopologyToken

log = logging.getLogger(__name__)


@dataclass
class StyleEmbedding:
    """A style in canonical space: token f_p (1, C) and AdaIN params (C,)."""

    f_p: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor


@dataclass
class ExternalStyleTokens:
    """Provider-supplied unit-normalized embeddings for one clip."""

    text: torch.Tensor | None = None
    image: torch.Tensor | None = None


def adain(f, mu, sigma, eps=1e-5):
    """Adaptive instance normalization over joints x frames, per channel.

    f: (N, T, C); mu, sigma: (C,). out = sigma * (f - mean) / (std + eps) + mu
    with population statistics taken jointly over the joint and frame axes
    of the one sequence. A constant channel maps to mu exactly.
    """
    mean = f.mean(dim=(0, 1))
    std = f.std(dim=(0, 1), unbiased=False)
    return sigma * (f - mean) / (std + eps) + mu


def as_rotation_tensor(clip, dtype=torch.float32, device=None):
    """(T, N, 6) tensor from a MotionClip or an array/tensor."""
    if isinstance(clip, MotionClip):
        data = clip.rotations
    else:
        data = clip
    t = torch.as_tensor(data, device=device)
    if t.dim() != 3 or t.shape[-1] != 6:
        raise ShapeError(f"expected (T, N, 6) rotations, got {tuple(t.shape)}")
    return t.to(dtype)


class StyleEncoder(nn.Module):
    """Transformer encoder producing (style token, per-frame content)."""

    def __init__(self, num_joints, channels, layers=4, heads=4):
        super().__init__()
        self.num_joints = num_joints
        self.input_proj = nn.Linear(num_joints * 6, channels)
        self.style_query = nn.Parameter(torch.randn(1, channels) * 0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=channels,
            nhead=heads,
            dim_feedforward=4 * channels,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.stack = nn.TransformerEncoder(layer, num_layers=layers)

    def forward(self, rotations):
        """rotations: (T, N, 6) -> f_p (1, C), f_m (T, C)."""
        t = rotations.shape[0]
        tokens = self.input_proj(rotations.reshape(t, -1))
        pe = tensor_ops.sinusoidal_embedding(
            torch.arange(t), tokens.shape[-1],
            dtype=tokens.dtype, device=tokens.device,
        )
        seq = torch.cat([self.style_query, tokens + pe], dim=0)
        out = self.stack(seq.unsqueeze(0)).squeeze(0)
        return out[:1], out[1:]


class StageOneModel(nn.Module):
    """Style encoder + canonical decoder + canonical topology token.

    Owns the canonical skeleton so losses can run FK, and the linear maps
    that produce (mu, sigma) from the style token and motion from the
    canonical feature.
    """

    def __init__(self, skeleton: Skeleton, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.skeleton = skeleton
        c = self.config.channels
        self.encoder = StyleEncoder(
            skeleton.num_joints, c,
            layers=self.config.encoder_layers, heads=self.config.heads,
        )
        self.canonical_token = TopologyToken(skeleton, c)
        self.style_map = nn.Linear(c, 2 * c)
        self.decoder = TokenQueryDecoder(
            c, layers=self.config.decoder_layers, heads=self.config.heads
        )
        self.out_proj = nn.Linear(c, 6)
        self.register_buffer(
            "offsets", torch.as_tensor(skeleton.offsets, dtype=torch.float32)
        )

    @property
    def num_canonical_joints(self):
        return self.skeleton.num_joints

    def _check_topology(self, rotations):
        if rotations.shape[1] != self.skeleton.num_joints:
            raise TopologyError(
                f"clip has {rotations.shape[1]} joints; the canonical space "
                f"expects {self.skeleton.num_joints}"
            )

    def encode_style(self, clip):
        """Canonical clip -> style token (1, C) and content feature (T, C)."""
        rotations = as_rotation_tensor(
            clip, dtype=self.out_proj.weight.dtype,
            device=self.out_proj.weight.device,
        )
        self._check_topology(rotations)
        return self.encoder(rotations)

    def embed_style(self, f_p):
        """Style token (1, C) -> (mu (C,), sigma (C,)), sigma > 0.

        The sigma half of the linear map goes through softplus: a bare
        linear layer can emit negative scales, which breaks AdaIN.
        """
        if f_p.dim() != 2 or f_p.shape[0] != 1:
            raise ShapeError(f"style token must be (1, C), got {tuple(f_p.shape)}")
        pre = self.style_map(f_p).squeeze(0)
        c = pre.shape[-1] // 2
        return pre[:c], F.softplus(pre[c:])

    def style_embedding(self, f_p) -> StyleEmbedding:
        """Bundle a style token (own encoder's or an external provider's)."""
        f_p = torch.as_tensor(f_p, dtype=self.out_proj.weight.dtype)
        if f_p.dim() == 1:
            f_p = f_p.unsqueeze(0)
        mu, sigma = self.embed_style(f_p)
        return StyleEmbedding(f_p=f_p, mu=mu, sigma=sigma)

    def decode_canonical(self, f_m, f_p):
        """Map content (T, C) + style (1, C) into the canonical space.

        The style token is repeated along time; the refined canonical token
        queries the {content[t], style} pair of each frame (per-frame
        attention). The full-sequence variant, where every frame's queries
        see all 2T memory tokens, sits behind config.full_sequence_attention.

        Returns the canonical feature (N_canonical, T, C).
        """
        if f_m.dim() != 2 or f_p.dim() != 2 or f_m.shape[1] != f_p.shape[1]:
            raise ShapeError(
                f"expected f_m (T, C) and f_p (1, C), got "
                f"{tuple(f_m.shape)} and {tuple(f_p.shape)}"
            )
        t = f_m.shape[0]
        queries = self.canonical_token.refine()  # N, C
        n = queries.shape[0]
        if self.config.full_sequence_attention:
            memory = torch.cat([f_m, f_p.expand(t, -1)], dim=0).unsqueeze(0)
            pe = tensor_ops.sinusoidal_embedding(
                torch.arange(t), queries.shape[1],
                dtype=f_m.dtype, device=f_m.device,
            )
            q = (queries.unsqueeze(0) + pe.unsqueeze(1)).reshape(1, t * n, -1)
            out = self.decoder(q, memory).reshape(t, n, -1)
        else:
            memory = torch.stack([f_m, f_p.expand(t, -1)], dim=1)  # T, 2, C
            q = queries.unsqueeze(0).expand(t, -1, -1)
            out = self.decoder(q, memory)  # T, N, C
        return out.permute(1, 0, 2)

    def reconstruct(self, f_styled):
        """Canonical feature (N, T, C) -> motion rotations (T, N, 6).

        Translation is not reconstructed here (the diffusion stage owns the
        global track); callers wanting a clip pair this with zeros.
        """
        return self.out_proj(f_styled).permute(1, 0, 2)

    def forward(self, clip):
        """Full autoencode pass with active self-stylization."""
        f_p, f_m = self.encode_style(clip)
        mu, sigma = self.embed_style(f_p)
        f_canon = self.decode_canonical(f_m, f_p)
        f_styled = adain(f_canon, mu, sigma, eps=self.config.adain_eps)
        m_hat = self.reconstruct(f_styled)
        return {
            "f_p": f_p, "f_m": f_m, "mu": mu, "sigma": sigma,
            "f_canon": f_canon, "f_styled": f_styled, "m_hat": m_hat,
        }


def _cosine(a, b):
    return F.cosine_similarity(a.reshape(1, -1), b.reshape(1, -1)).squeeze(0)


def reconstruction_loss(m, m_hat, n, n_hat, v, v_hat):
    """Element-mean squared errors of rotations, positions and velocities."""
    return F.mse_loss(m_hat, m) + F.mse_loss(n_hat, n) + F.mse_loss(v_hat, v)


def similarity_loss(f_p, text=None, image=None):
    """Cross-modal alignment: sum of (1 - cos) against available tokens.

    With both modalities present this is 2 - cos(text, f_p) - cos(image, f_p),
    bounded in [0, 4]. Missing modalities skip their term with a warning so
    motion-only corpora still train.
    """
    terms = []
    for name, vec in (("text", text), ("image", image)):
        if vec is None:
            log.warning("no %s embedding for a clip; term skipped", name)
            continue
        terms.append(1.0 - _cosine(torch.as_tensor(vec, dtype=f_p.dtype,
                                                   device=f_p.device), f_p))
    if not terms:
        return torch.zeros((), dtype=f_p.dtype, device=f_p.device)
    return torch.stack(terms).sum()


def pretrain_losses(model: StageOneModel, clips, external_tokens=None,
                    weights: LossWeights | None = None):
    """Reconstruction + cross-modal similarity losses over a clip batch.

    clips: list of canonical MotionClips. external_tokens: parallel list of
    ExternalStyleTokens (entries or modalities may be None; missing tokens
    skip their similarity term with a warning, supporting motion-only
    corpora). All squared-error terms are element means.

    Returns a dict with rec / sim / total torch scalars.
    """
    weights = weights or LossWeights()
    if external_tokens is None:
        external_tokens = [None] * len(clips)
    if len(external_tokens) != len(clips):
        raise ShapeError("external_tokens must parallel clips")
    dtype = model.out_proj.weight.dtype
    device = model.out_proj.weight.device
    parents = list(model.skeleton.parents)
    offsets = model.offsets.to(dtype)

    rec_terms, sim_terms = [], []
    for clip, tokens in zip(clips, external_tokens):
        out = model(clip)
        m = as_rotation_tensor(clip, dtype=dtype, device=device)
        m_hat = out["m_hat"]
        translation = torch.as_tensor(clip.translation, dtype=dtype, device=device)
        n = tensor_ops.forward_kinematics(parents, offsets, m, translation)
        n_hat = tensor_ops.forward_kinematics(parents, offsets, m_hat, translation)
        v = tensor_ops.joint_velocities(n, clip.fps)
        v_hat = tensor_ops.joint_velocities(n_hat, clip.fps)
        rec_terms.append(reconstruction_loss(m, m_hat, n, n_hat, v, v_hat))
        if tokens is not None:
            sim_terms.append(similarity_loss(out["f_p"], tokens.text, tokens.image))

    rec = torch.stack(rec_terms).mean()
    if sim_terms:
        sim = torch.stack(sim_terms).sum() / len(clips)
    else:
        sim = torch.zeros((), dtype=dtype, device=device)
    total = rec + weights.nu_sim * sim
    return {"rec": rec, "sim": sim, "total": total}


def train_stage_one(model: StageOneModel, clips, external_tokens=None,
                    weights=None, steps=2000, lr=1e-3, seed=0, log_every=200):
    """Adam pre-training loop; single-threaded, deterministic per seed.

    Returns the per-step total-loss history.
    """
    torch.manual_seed(seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    model.train()
    for step in range(steps):
        optimizer.zero_grad()
        losses = pretrain_losses(model, clips, external_tokens, weights)
        losses["total"].backward()
        optimizer.step()
        history.append(float(losses["total"].detach()))
        if log_every and step % log_every == 0:
            log.info(
                "stage1 step %d: total %.5f rec %.5f sim %.5f",
                step, history[-1], float(losses["rec"].detach()),
                float(losses["sim"].detach()),
            )
    model.eval()
    return history


def load_embedding_records(path, channels):
    """Load provider embeddings: JSON records {id, modality, vector}.

    Vectors are unit-normalized on load (cosine is scale-invariant; the
    normalization just stabilizes logging). Returns {id: {modality: array}}.
    """
    with open(path, "r", encoding="utf-8") as f:
        records = json.load(f)
    if not isinstance(records, list):
        raise ConfigError("embedding file must be a JSON array of records")
    table = {}
    for rec in records:
        try:
            rid, modality, vector = rec["id"], rec["modality"], rec["vector"]
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed embedding record: {rec!r}") from exc
        if modality not in ("text", "image", "video"):
            raise ConfigError(f"unknown modality {modality!r} for id {rid!r}")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (channels,):
            raise ConfigError(
                f"embedding {rid!r}/{modality} has {vec.shape[0] if vec.ndim == 1 else vec.shape} "
                f"values, expected {channels}"
            )
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ConfigError(f"embedding {rid!r}/{modality} is the zero vector")
        table.setdefault(str(rid), {})[modality] = vec / norm
    return table
