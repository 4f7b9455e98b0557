"""Command-line entry point.

Subcommands: pretrain | train-tsd | stylize | sweep-alpha | eval | convert.
Every run takes a JSON config (--config), is seeded (--seed), and writes a
manifest (config + seed + checkpoint hash) next to its outputs so results
reproduce bitwise. Log level comes from the MOTIONS_LOG environment
variable (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .bvh import parse_bvh, write_bvh
from .config import LossWeights, ModelConfig
from .diffusion import TsdModel, build_schedule, prompt_style, sample, train_tsd
from .errors import (
    BvhParseError,
    ConfigError,
    EmptyPartError,
    MotionStyleError,
    NumericalError,
    ShapeError,
    TopologyError,
)
from .evaluation import FeatureSet, diversity, fmd, write_report
from .skeleton import load_part_map
from .style_embedding import (
    ExternalStyleTokens,
    StageOneModel,
    load_embedding_records,
    train_stage_one,
)

log = logging.getLogger("motionstyle")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_TOPOLOGY = 4
EXIT_DATA = 5
EXIT_NUMERICAL = 6

_EXIT_BY_ERROR = (
    (BvhParseError, EXIT_DATA),
    (NumericalError, EXIT_NUMERICAL),
    ((TopologyError, EmptyPartError, ShapeError), EXIT_TOPOLOGY),
    (ConfigError, EXIT_CONFIG),
)


@dataclass
class RunConfig:
    """One run: resolved paths, hyperparameters, seed, alpha."""

    raw: dict
    model: ModelConfig
    weights: LossWeights
    seed: int = 0
    alpha: float = 1.0
    steps: int | None = None
    out_dir: Path = field(default_factory=lambda: Path("."))

    @classmethod
    def load(cls, args):
        raw = {}
        if args.config:
            try:
                with open(args.config, "r", encoding="utf-8") as f:
                    raw = json.load(f)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"unreadable config {args.config}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config must be a JSON object")
        model = ModelConfig.from_dict(raw.get("model", {}))
        weights = LossWeights(**raw.get("loss_weights", {}))
        seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
        alpha = args.alpha if args.alpha is not None else float(raw.get("alpha", 1.0))
        steps = args.steps if args.steps is not None else raw.get("steps")
        out_dir = Path(args.out if args.out else raw.get("out", "."))
        return cls(raw=raw, model=model, weights=weights, seed=seed,
                   alpha=alpha, steps=steps, out_dir=out_dir)

    def path(self, key, required=True):
        value = self.raw.get(key)
        if value is None:
            if required:
                raise ConfigError(f"config is missing required path {key!r}")
            return None
        p = Path(value)
        if not p.exists():
            raise ConfigError(f"config path {key!r} does not exist: {p}")
        return p


def _read_clip(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_bvh(text)


def _attach_part_map(skeleton, cfg, key):
    path = cfg.path(key, required=False)
    if path is None:
        log.warning("no %s sidecar given; part-dependent losses will fail", key)
        return skeleton
    return skeleton.with_part_map(load_part_map(path))


def _write_manifest(cfg: RunConfig, command, outputs, checkpoint_path=None):
    manifest = {
        "command": command,
        "config": cfg.raw,
        "model": cfg.model.to_dict(),
        "seed": cfg.seed,
        "alpha": cfg.alpha,
        "outputs": [str(o) for o in outputs],
    }
    if checkpoint_path is not None:
        manifest["checkpoint"] = {
            "path": str(checkpoint_path),
            "sha256": ckpt.checkpoint_hash(checkpoint_path),
        }
    path = cfg.out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_pretrain(cfg: RunConfig):
    clip_paths = cfg.raw.get("clips")
    if not clip_paths:
        raise ConfigError("pretrain config needs a non-empty 'clips' list")
    skeleton = None
    clips, ids = [], []
    for entry in clip_paths:
        s, clip = _read_clip(entry)
        if skeleton is None:
            skeleton = s
        elif s.joints != skeleton.joints or s.parents != skeleton.parents:
            raise TopologyError(
                f"{entry} does not match the canonical topology of the first clip"
            )
        clips.append(clip)
        ids.append(Path(entry).stem)
    skeleton = _attach_part_map(skeleton, cfg, "part_map")

    tokens = None
    emb_path = cfg.path("embeddings", required=False)
    if emb_path is not None:
        table = load_embedding_records(emb_path, cfg.model.channels)
        tokens = []
        for cid in ids:
            record = table.get(cid, {})
            vec = record.get("image")
            if vec is None:
                vec = record.get("video")  # video vectors are averaged frames
            tokens.append(ExternalStyleTokens(
                text=_maybe_tensor(record.get("text")),
                image=_maybe_tensor(vec),
            ))

    torch.manual_seed(cfg.seed)
    model = StageOneModel(skeleton, cfg.model)
    steps = int(cfg.steps if cfg.steps is not None else cfg.raw.get("steps", 2000))
    lr = float(cfg.raw.get("lr", 1e-3))
    history = train_stage_one(
        model, clips, tokens, cfg.weights, steps=steps, lr=lr, seed=cfg.seed
    )
    log.info("pretrain done: loss %.5f -> %.5f", history[0], history[-1])

    out = cfg.out_dir / "stage1.ckpt"
    ckpt.save_stage_one(out, model, seed=cfg.seed)
    _write_manifest(cfg, "pretrain", [out], checkpoint_path=out)
    return EXIT_OK


def _maybe_tensor(vec):
    return None if vec is None else torch.as_tensor(np.asarray(vec), dtype=torch.float32)


def cmd_train_tsd(cfg: RunConfig):
    stage1 = ckpt.load_stage_one(cfg.path("stage1"))
    skeleton, source = _read_clip(cfg.path("source"))
    skeleton = _attach_part_map(skeleton, cfg, "source_part_map")
    prompt_skel, prompt = _read_clip(cfg.path("prompt"))
    if prompt_skel.num_joints != stage1.skeleton.num_joints:
        raise TopologyError(
            f"prompt has {prompt_skel.num_joints} joints; the canonical space "
            f"expects {stage1.skeleton.num_joints}"
        )
    schedule_cfg = cfg.raw.get("schedule", {})
    schedule = build_schedule(
        int(schedule_cfg.get("steps", cfg.model.diffusion_steps)),
        float(schedule_cfg.get("beta_start", cfg.model.beta_start)),
        float(schedule_cfg.get("beta_end", cfg.model.beta_end)),
    )
    torch.manual_seed(cfg.seed)
    model = TsdModel(stage1, skeleton, cfg.model, fps=source.fps)
    steps = int(cfg.steps if cfg.steps is not None else cfg.raw.get("steps", 2000))
    lr = float(cfg.raw.get("lr", 1e-3))
    history = train_tsd(
        model, schedule, source, prompt, cfg.weights,
        steps=steps, lr=lr, seed=cfg.seed,
    )
    log.info("train-tsd done: loss %.5f -> %.5f", history[0], history[-1])

    out = cfg.out_dir / "tsd.ckpt"
    ckpt.save_tsd(
        out, model, seed=cfg.seed,
        schedule={"steps": schedule.steps,
                  "beta_start": float(schedule.beta[0]),
                  "beta_end": float(schedule.beta[-1])},
    )
    _write_manifest(cfg, "train-tsd", [out], checkpoint_path=out)
    return EXIT_OK


def _resolve_style(cfg: RunConfig, model):
    """Style from a prompt BVH or a precomputed embedding record."""
    prompt_path = cfg.path("prompt", required=False)
    if prompt_path is not None:
        skel, prompt = _read_clip(prompt_path)
        if skel.num_joints != model.stage1.skeleton.num_joints:
            raise TopologyError(
                f"style prompt has {skel.num_joints} joints; expected "
                f"{model.stage1.skeleton.num_joints}"
            )
        return prompt_style(model.stage1, prompt)
    emb = cfg.raw.get("embedding")
    if not emb:
        raise ConfigError("config needs 'prompt' (BVH) or 'embedding' record")
    if not isinstance(emb, dict) or "file" not in emb or "id" not in emb:
        raise ConfigError("'embedding' must be {file, id, modality}")
    table = load_embedding_records(Path(emb["file"]), model.config.channels)
    record = table.get(emb["id"])
    if record is None or emb.get("modality", "text") not in record:
        raise ConfigError(
            f"embedding id {emb.get('id')!r} / modality "
            f"{emb.get('modality', 'text')!r} not found"
        )
    token = record[emb.get("modality", "text")]
    return model.stage1.style_embedding(
        torch.as_tensor(token, dtype=torch.float32)
    )


def _schedule_from_manifest(cfg, manifest):
    stored = manifest.get("schedule") or {}
    steps = int(cfg.steps if cfg.steps is not None
                else stored.get("steps", cfg.model.diffusion_steps))
    return build_schedule(
        steps,
        float(stored.get("beta_start", cfg.model.beta_start)),
        float(stored.get("beta_end", cfg.model.beta_end)),
    )


def cmd_stylize(cfg: RunConfig, alphas=None):
    checkpoint_path = cfg.path("checkpoint")
    model, manifest = ckpt.load_tsd(checkpoint_path)
    style = _resolve_style(cfg, model)
    schedule = _schedule_from_manifest(cfg, manifest)
    length = int(cfg.raw.get("length", 48))
    alphas = alphas if alphas is not None else [cfg.alpha]
    outputs = []
    for alpha in alphas:
        clip = sample(model, schedule, length, style, alpha=alpha, seed=cfg.seed)
        name = f"stylized_alpha{alpha:.2f}.bvh" if len(alphas) > 1 else "stylized.bvh"
        out = cfg.out_dir / name
        out.write_text(write_bvh(model.skeleton, clip), encoding="utf-8")
        outputs.append(out)
        log.info("wrote %s", out)
    _write_manifest(
        cfg, "stylize" if len(alphas) == 1 else "sweep-alpha",
        outputs, checkpoint_path=checkpoint_path,
    )
    return EXIT_OK


def cmd_sweep_alpha(cfg: RunConfig, grid):
    try:
        alphas = [float(a) for a in grid.split(",") if a.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad --grid value: {grid!r}") from exc
    if not alphas:
        raise ConfigError("--grid must name at least one alpha")
    return cmd_stylize(cfg, alphas=alphas)


def cmd_eval(cfg: RunConfig):
    stage1 = ckpt.load_stage_one(cfg.path("stage1"))
    window = int(cfg.raw.get("window", 16))
    rows = []

    def load_set(key):
        paths = cfg.raw.get(key) or []
        return [_read_clip(p)[1] for p in paths]

    generated = load_set("generated")
    reference = load_set("reference")
    if generated and reference:
        feats = {}
        for name, clips in (("generated", generated), ("reference", reference)):
            f_p_rows, f_m_rows = [], []
            with torch.no_grad():
                for clip in clips:
                    f_p, f_m = stage1.encode_style(clip)
                    f_p_rows.append(f_p.squeeze(0).numpy())
                    f_m_rows.append(f_m.numpy())
            feats[name] = (
                np.stack(f_p_rows),
                np.concatenate(f_m_rows, axis=0),
            )
        rows.append({
            "metric": "content_fmd",
            "value": fmd(FeatureSet(feats["generated"][1], "content"),
                         FeatureSet(feats["reference"][1], "content")),
            "config": {"channels": stage1.config.channels},
        })
        if len(generated) >= 2 and len(reference) >= 2:
            rows.append({
                "metric": "style_fmd",
                "value": fmd(FeatureSet(feats["generated"][0], "style"),
                             FeatureSet(feats["reference"][0], "style")),
                "config": {"channels": stage1.config.channels},
            })

    source_path = cfg.path("source", required=False)
    if source_path is not None and generated:
        _, source = _read_clip(source_path)
        glo, loc = diversity(generated, source, window=window)
        rows.append({"metric": "glo_d", "value": glo, "config": {"window": window}})
        rows.append({"metric": "loc_d", "value": loc, "config": {"window": window}})

    if not rows:
        raise ConfigError(
            "eval config produced no metrics; provide generated/reference "
            "clip lists and/or a source clip"
        )
    report = cfg.out_dir / "report.json"
    txt = write_report(report, rows)
    _write_manifest(cfg, "eval", [report, Path(txt)])
    for row in rows:
        log.info("%s = %.4f", row["metric"], row["value"])
    return EXIT_OK


def cmd_convert(cfg: RunConfig, src, dst):
    skeleton, clip = _read_clip(Path(src))
    Path(dst).write_text(write_bvh(skeleton, clip), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="motionstyle",
        description="Generative motion stylization across skeleton structures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--out", help="output directory")

    common(sub.add_parser("pretrain", help="train the stage-1 style autoencoder"))
    common(sub.add_parser("train-tsd", help="train the diffusion model on one source"))
    common(sub.add_parser("stylize", help="sample a stylized clip from a checkpoint"))
    sweep = sub.add_parser("sweep-alpha", help="emit one clip per alpha in a grid")
    common(sweep)
    sweep.add_argument("--grid", required=True, help="comma-separated alphas")
    common(sub.add_parser("eval", help="compute FMD and diversity reports"))
    convert = sub.add_parser("convert", help="round-trip a BVH file")
    common(convert)
    convert.add_argument("src")
    convert.add_argument("dst")
    return parser


def run(argv=None):
    """Entry point; returns a process exit code."""
    level = os.environ.get("MOTIONS_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE

    try:
        cfg = RunConfig.load(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "train-tsd":
            return cmd_train_tsd(cfg)
        if args.command == "stylize":
            return cmd_stylize(cfg)
        if args.command == "sweep-alpha":
            return cmd_sweep_alpha(cfg, args.grid)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "convert":
            return cmd_convert(cfg, args.src, args.dst)
        parser.error(f"unknown command {args.command!r}")
    except MotionStyleError as exc:
        for types, code in _EXIT_BY_ERROR:
            if isinstance(exc, types):
                log.error("%s: %s", type(exc).__name__, exc)
                return code
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_UNEXPECTED
    except Exception:  # pragma: no cover - safety net
        log.exception("unexpected failure")
        return EXIT_UNEXPECTED
    return EXIT_USAGE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
