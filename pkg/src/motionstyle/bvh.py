"""BVH motion-file ingestion, emission, and temporal resampling.

Accepted format: standard HIERARCHY/MOTION BVH text, UTF-8, LF or CRLF.
Rotation channels are Euler degrees in the per-joint declared order (the
six distinct-axis orders only); position channels are file units treated
as meters. Emission is uniform: ZXY rotation order, LF line endings, six
decimal places.

Euler <-> matrix conversion is delegated to scipy's Rotation (intrinsic,
upper-case axis sequences), which matches the BVH convention of composing
the declared channels left to right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    BvhParseError,
    ConfigError,
    ShapeError,
    TruncatedDataError,
    UnsupportedChannelError,
)
from .skeleton import MotionClip, Skeleton, rot6d_to_matrix

_POSITION_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROTATION_CHANNELS = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_SUPPORTED_ORDERS = {"ZXY", "XYZ", "ZYX", "YXZ", "XZY", "YZX"}

WRITE_ORDER = "ZXY"


@dataclass
class _JointDecl:
    name: str
    parent: int
    offset: np.ndarray
    channels: list = field(default_factory=list)

    @property
    def rotation_order(self):
        return "".join(
            _ROTATION_CHANNELS[c] for c in self.channels if c in _ROTATION_CHANNELS
        )


class _Tokens:
    """Whitespace token stream over the document, tracking line numbers."""

    def __init__(self, text):
        self.items = []  # (line_no, token)
        for no, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((no, tok))
        self.pos = 0

    @property
    def line(self):
        if self.pos < len(self.items):
            return self.items[self.pos][0]
        return self.items[-1][0] if self.items else 0

    def peek(self):
        if self.pos >= len(self.items):
            return None
        return self.items[self.pos][1]

    def next(self, what="token"):
        tok = self.peek()
        if tok is None:
            raise BvhParseError(f"unexpected end of file, expected {what}", self.line)
        self.pos += 1
        return tok

    def expect(self, literal):
        line = self.line
        tok = self.next(literal)
        if tok.upper() != literal.upper():
            raise BvhParseError(f"expected {literal!r}, got {tok!r}", line)

    def number(self, what="number"):
        line = self.line
        tok = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise BvhParseError(f"expected {what}, got {tok!r}", line) from None


def _parse_joint(tokens, joints, parent):
    line = tokens.line
    name = tokens.next("joint name")
    tokens.expect("{")
    tokens.expect("OFFSET")
    offset = np.array([tokens.number("offset") for _ in range(3)])
    tokens.expect("CHANNELS")
    count = int(tokens.number("channel count"))
    channels = []
    for _ in range(count):
        ch_line = tokens.line
        ch = tokens.next("channel name")
        if ch not in _POSITION_CHANNELS and ch not in _ROTATION_CHANNELS:
            raise UnsupportedChannelError(f"unsupported channel {ch!r}", ch_line)
        channels.append(ch)
    decl = _JointDecl(name, parent, offset, channels)
    order = decl.rotation_order
    if order and order not in _SUPPORTED_ORDERS:
        raise BvhParseError(
            f"joint {name!r} declares rotation order {order!r}; "
            f"supported: {sorted(_SUPPORTED_ORDERS)}",
            line,
        )
    index = len(joints)
    joints.append(decl)
    while True:
        tok = tokens.peek()
        if tok is None:
            raise BvhParseError("unexpected end of file inside joint block", tokens.line)
        if tok == "}":
            tokens.next()
            return
        if tok.upper() == "JOINT":
            tokens.next()
            _parse_joint(tokens, joints, index)
        elif tok.upper() == "END":
            tokens.next()
            tokens.expect("Site")
            tokens.expect("{")
            tokens.expect("OFFSET")
            for _ in range(3):
                tokens.number("offset")
            tokens.expect("}")
        else:
            raise BvhParseError(f"unexpected token {tok!r} in joint block", tokens.line)


def parse_bvh(text):
    """Parse BVH text into a Skeleton and a MotionClip.

    Joint order is depth-first document order. Euler rotation channels are
    composed in their declared order and stored as 6D features; root
    position channels populate the translation track. Position channels on
    non-root joints are accepted and ignored (rest offsets drive FK).

    Returns
    -------
    (Skeleton, MotionClip)

    Raises
    ------
    BvhParseError, UnsupportedChannelError, TruncatedDataError
    """
    tokens = _Tokens(text)
    tokens.expect("HIERARCHY")
    tokens.expect("ROOT")
    joints: list[_JointDecl] = []
    _parse_joint(tokens, joints, -1)
    tokens.expect("MOTION")
    tokens.expect("Frames:")
    num_frames = int(tokens.number("frame count"))
    if num_frames < 1:
        raise BvhParseError("frame count must be >= 1", tokens.line)
    tokens.expect("Frame")
    tokens.expect("Time:")
    frame_time = tokens.number("frame time")
    if frame_time <= 0:
        raise BvhParseError("frame time must be positive", tokens.line)

    total_channels = sum(len(j.channels) for j in joints)
    values = np.empty((num_frames, total_channels))
    for f in range(num_frames):
        for c in range(total_channels):
            line = tokens.line
            tok = tokens.peek()
            if tok is None:
                raise TruncatedDataError(
                    f"motion data ends at frame {f} ({num_frames} declared)", line
                )
            try:
                values[f, c] = float(tok)
            except ValueError:
                raise BvhParseError(
                    f"expected channel value, got {tok!r}", line
                ) from None
            tokens.pos += 1
    if tokens.peek() is not None:
        raise BvhParseError(
            f"trailing data after {num_frames} declared frames", tokens.line
        )

    skeleton = Skeleton(
        tuple(j.name for j in joints),
        tuple(j.parent for j in joints),
        np.stack([j.offset for j in joints]),
    )

    rotations = np.zeros((num_frames, len(joints), 6))
    rotations[..., 0] = 1.0
    rotations[..., 4] = 1.0
    translation = np.zeros((num_frames, 3))
    col = 0
    for idx, decl in enumerate(joints):
        rot_cols, rot_order = [], decl.rotation_order
        for ch in decl.channels:
            if ch in _POSITION_CHANNELS and idx == 0:
                translation[:, _POSITION_CHANNELS[ch]] = values[:, col]
            elif ch in _ROTATION_CHANNELS:
                rot_cols.append(col)
            col += 1
        if rot_order:
            angles = values[:, rot_cols]
            mats = Rotation.from_euler(rot_order, angles, degrees=True).as_matrix()
            rotations[:, idx] = np.concatenate([mats[:, :, 0], mats[:, :, 1]], axis=-1)

    clip = MotionClip(rotations, translation, fps=1.0 / frame_time)
    return skeleton, clip


def write_bvh(skeleton: Skeleton, clip: MotionClip):
    """Emit a BVH document for a clip.

    The root gets six channels (position + ZXY rotation), every other joint
    three ZXY rotation channels; leaves get a zero End Site. Re-parsing the
    output recovers the same skeleton and rotations that recompose to the
    same matrices.
    """
    if clip.num_joints != skeleton.num_joints:
        raise ShapeError(
            f"clip has {clip.num_joints} joints, skeleton has {skeleton.num_joints}"
        )
    mats = rot6d_to_matrix(clip.rotations)  # (T, N, 3, 3)
    t, n = clip.num_frames, clip.num_joints
    euler = Rotation.from_matrix(mats.reshape(-1, 3, 3)).as_euler(
        WRITE_ORDER, degrees=True
    ).reshape(t, n, 3)

    lines = ["HIERARCHY"]

    def emit(index, depth):
        pad = "  " * depth
        kind = "ROOT" if index == 0 else "JOINT"
        lines.append(f"{pad}{kind} {skeleton.joints[index]}")
        lines.append(f"{pad}{{")
        off = skeleton.offsets[index]
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if index == 0:
            lines.append(
                f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                "Zrotation Xrotation Yrotation"
            )
        else:
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        children = skeleton.children(index)
        if children:
            for child in children:
                emit(child, depth + 1)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(f"{pad}  }}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {t}")
    lines.append(f"Frame Time: {1.0 / clip.fps!r}")
    for f in range(t):
        row = list(clip.translation[f]) + [v for j in range(n) for v in euler[f, j]]
        lines.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"


def resample(clip: MotionClip, num_frames_out) -> MotionClip:
    """Linearly resample a clip in time to num_frames_out frames.

    Interpolation is channel-wise on the 6D features and the translation
    (6D features blend gracefully; matrices are re-orthonormalized only
    when needed downstream). Endpoints are preserved exactly; fps is kept
    as-is, this is a tensor-alignment op, not a retiming op.
    """
    if num_frames_out < 1:
        raise ConfigError(f"resample length must be >= 1, got {num_frames_out}")
    t_in = clip.num_frames
    if num_frames_out == t_in:
        return MotionClip(
            clip.rotations.copy(), clip.translation.copy(), fps=clip.fps
        )
    coords = np.linspace(0.0, t_in - 1, num_frames_out)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, t_in - 1)
    frac = coords - lo

    def interp(channel):
        w = frac.reshape((-1,) + (1,) * (channel.ndim - 1))
        return (1.0 - w) * channel[lo] + w * channel[hi]

    return MotionClip(interp(clip.rotations), interp(clip.translation), fps=clip.fps)
