"""Skeleton sequences: SKEL v1 files, manifests, modality streams, padding and
the synthetic coarse/fine action generator."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, GraphError, UnsupportedVersionError

MODALITIES = ("joint", "bone", "joint_motion", "bone_motion")


@dataclass
class SkeletonSequence:
    coords: np.ndarray  # (T, N, d)
    label: int = 0
    id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[0] < 1:
            raise FormatError(f"coords must be (T>=1, N, d), got shape {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise FormatError(f"sequence {self.id!r} has non-finite coordinates")

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def num_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def dims(self) -> int:
        return self.coords.shape[2]


# ---------------------------------------------------------------------------
# SKEL v1:  b"SKEL", u8 version, u32 N, T, d, label (little-endian), then
# T*N*d little-endian float64, frame-major then joint-major.

MAGIC = b"SKEL"
VERSION = 1
_HEADER = struct.Struct("<4sBIIII")


def encode_sequence(seq: SkeletonSequence) -> bytes:
    T, N, d = seq.coords.shape
    head = _HEADER.pack(MAGIC, VERSION, N, T, d, int(seq.label))
    return head + seq.coords.astype("<f8").tobytes(order="C")


def decode_sequence(buf: bytes, id: str = "") -> SkeletonSequence:
    if len(buf) < 5:
        raise FormatError("truncated SKEL header", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}", offset=0)
    if buf[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported SKEL version {buf[4]}", offset=4)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated SKEL header", offset=len(buf))
    _, _, N, T, d, label = _HEADER.unpack_from(buf)
    if T < 1 or N < 1 or d < 1:
        raise FormatError(f"invalid extents N={N} T={T} d={d}", offset=5)
    need = _HEADER.size + 8 * T * N * d
    if len(buf) < need:
        raise FormatError(f"truncated SKEL payload: need {need} bytes, have {len(buf)}", offset=len(buf))
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after SKEL payload", offset=need)
    coords = np.frombuffer(buf, dtype="<f8", count=T * N * d, offset=_HEADER.size)
    return SkeletonSequence(coords.reshape(T, N, d).astype(np.float64), int(label), id)


def save_sequence(seq: SkeletonSequence, path) -> None:
    Path(path).write_bytes(encode_sequence(seq))


def load_sequence(path) -> SkeletonSequence:
    path = Path(path)
    return decode_sequence(path.read_bytes(), id=path.stem)


# ---------------------------------------------------------------------------
# manifests:  one "path<TAB>label" line per sequence

def write_manifest(entries: Sequence[tuple[str, int]], path) -> None:
    Path(path).write_text("".join(f"{p}\t{lab}\n" for p, lab in entries))


def read_manifest(path, num_classes: int | None = None) -> list[tuple[Path, int]]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            rel, lab = line.rsplit("\t", 1)
            lab = int(lab)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected 'path<TAB>label'") from None
        seq_path = Path(rel) if Path(rel).is_absolute() else path.parent / rel
        if not seq_path.exists():
            raise FormatError(f"{path}:{lineno}: sequence file {seq_path} not found")
        if num_classes is not None and not 0 <= lab < num_classes:
            raise FormatError(f"{path}:{lineno}: label {lab} outside [0, {num_classes})")
        out.append((seq_path, lab))
    return out


def load_manifest(path, num_classes: int | None = None) -> list[SkeletonSequence]:
    seqs = []
    for seq_path, lab in read_manifest(path, num_classes):
        seq = load_sequence(seq_path)
        seq.label = lab
        seqs.append(seq)
    return seqs


# ---------------------------------------------------------------------------
# modalities

def _check_parents(parents: np.ndarray) -> None:
    n = len(parents)
    roots = [j for j in range(n) if parents[j] == j]
    if len(roots) != 1:
        raise GraphError(f"parent map must have exactly one root, found {roots}")
    for j in range(n):
        seen, k = 0, j
        while parents[k] != k:
            k = int(parents[k])
            if not 0 <= k < n:
                raise GraphError(f"parent index {k} out of range")
            seen += 1
            if seen > n:
                raise GraphError(f"parent map is cyclic (joint {j} never reaches the root)")


def derive_bone(coords: np.ndarray, parents) -> np.ndarray:
    """coords[t, j] - coords[t, parent(j)]; the root's bone is zero."""
    parents = np.asarray(parents, dtype=np.int64)
    if len(parents) != coords.shape[1]:
        raise GraphError(f"parent map covers {len(parents)} joints, sequence has {coords.shape[1]}")
    _check_parents(parents)
    return coords - coords[:, parents]


def derive_motion(stream: np.ndarray) -> np.ndarray:
    """stream[t+1] - stream[t], with a zero final frame."""
    out = np.zeros_like(stream)
    out[:-1] = stream[1:] - stream[:-1]
    return out


def modality_stream(coords: np.ndarray, kind: str, parents=None) -> np.ndarray:
    """The (T, N, d) stream for ``kind``."""
    if kind not in MODALITIES:
        raise ConfigError(f"modality must be one of {MODALITIES}, got {kind!r}")
    if kind.startswith("bone"):
        if parents is None:
            raise ConfigError("bone modalities need a parent map")
        base = derive_bone(coords, parents)
    else:
        base = coords
    return derive_motion(base) if kind.endswith("motion") else base


def to_features(stream: np.ndarray) -> np.ndarray:
    """(T, N, d) -> (d, T, N)."""
    return np.ascontiguousarray(stream.transpose(2, 0, 1))


def pad_or_crop(seq: SkeletonSequence, target: int) -> SkeletonSequence:
    """Loop-pad short sequences from the start; centre-crop long ones."""
    if target < 1:
        raise ConfigError(f"target frame count must be >= 1, got {target}")
    T = seq.frames
    if T == target:
        idx = np.arange(T)
    elif T < target:
        idx = np.arange(target) % T
    else:
        start = (T - target) // 2
        idx = np.arange(start, start + target)
    return SkeletonSequence(seq.coords[idx], seq.label, seq.id)


def batch_features(seqs: Sequence[SkeletonSequence], kind: str = "joint", parents=None,
                   target: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, d, T, N) features and (B,) labels."""
    feats = []
    for s in seqs:
        if target is not None:
            s = pad_or_crop(s, target)
        feats.append(to_features(modality_stream(s.coords, kind, parents)))
    return np.stack(feats), np.array([s.label for s in seqs], dtype=np.int64)


# ---------------------------------------------------------------------------
# synthetic data

# 11-joint stick figure (matches data/synthetic11.edges)
BASE_POSE = np.array([
    [0.00, 0.00, 0.0],   # pelvis
    [0.00, 0.50, 0.0],   # chest
    [0.00, 0.80, 0.0],   # head
    [-0.30, 0.45, 0.0],  # l_elbow
    [-0.55, 0.35, 0.0],  # l_hand
    [0.30, 0.45, 0.0],   # r_elbow
    [0.55, 0.35, 0.0],   # r_hand
    [-0.10, -0.45, 0.0],  # l_knee
    [-0.10, -0.90, 0.0],  # l_foot
    [0.10, -0.45, 0.0],   # r_knee
    [0.10, -0.90, 0.0],   # r_foot
])
LIMBS = {
    "l_arm": ((3, 0.5), (4, 1.0)),
    "r_arm": ((5, 0.5), (6, 1.0)),
    "l_leg": ((7, 0.5), (8, 1.0)),
    "r_leg": ((9, 0.5), (10, 1.0)),
}


@dataclass
class ClassPattern:
    """Generator parameters for one class.

    The coarse term swings a whole limb out along ``direction`` and back;
    the fine term adds a small tremor with a period of ``fine_period`` frames
    to one pivotal joint, gated by a raised cosine locked to the coarse cycle
    and shifted by ``fine_phase``.  With a period of 4 frames the tremor is
    zero on every even frame, so stride-2 subsampling of the raw input drops it.
    """
    limb: str
    direction: tuple[float, float, float]
    coarse_amp: float = 0.3
    coarse_cycles: float = 1.0
    fine_joint: int = 6
    fine_amp: float = 0.05
    fine_period: float = 4.0
    fine_phase: float = 0.0
    fine_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)


@dataclass
class SyntheticSpec:
    patterns: list[ClassPattern]
    frames: int = 64
    per_class: int = 20
    noise: float = 0.01
    amp_jitter: float = 0.2
    shift_jitter: int = 0
    translate: float = 0.1
    seed: int = 7

    @property
    def num_classes(self) -> int:
        return len(self.patterns)


def pattern_trajectory(p: ClassPattern, frames: int, amp_scale: float = 1.0,
                       fine_scale: float = 1.0, shift: float = 0.0) -> np.ndarray:
    """Noise-free (T, 11, 3) trajectory for one class pattern."""
    k = np.arange(frames) + shift
    t = k / frames
    coords = np.repeat(BASE_POSE[None], frames, axis=0).copy()
    # raised-cosine excursion: the limb leaves the rest pose and returns
    coarse = 0.5 * (1.0 - np.cos(2 * np.pi * p.coarse_cycles * t)) * p.coarse_amp * amp_scale
    direction = np.asarray(p.direction, dtype=np.float64)
    for joint, weight in LIMBS[p.limb]:
        coords[:, joint] += weight * coarse[:, None] * direction
    gate = 0.5 * (1.0 + np.cos(2 * np.pi * p.coarse_cycles * t - p.fine_phase))
    fine = p.fine_amp * fine_scale * gate * np.sin(2 * np.pi * k / p.fine_period)
    coords[:, p.fine_joint] += fine[:, None] * np.asarray(p.fine_direction, dtype=np.float64)
    return coords


FINE_DIRECTIONS = ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


def coarse_fine_patterns(num_coarse: int = 4, fine_variants: int = 2, fine_amp: float = 0.05,
                         coarse_amp: float = 0.3, vary: str = "direction") -> list[ClassPattern]:
    """Classes on a coarse x fine grid.

    Classes sharing a fine index but not a coarse index differ only in the
    whole-limb trajectory.  Classes sharing a coarse index differ only in
    the pivotal joint's tremor: its axis (``vary="direction"``) or the phase
    of its gate (``vary="phase"``).
    """
    # no two classes share a limb motion up to sign or left/right mirroring,
    # so each coarse class has its own mean absolute joint velocity profile
    diag = float(np.sqrt(0.5))
    coarse = [("r_arm", (0.0, 1.0, 0.0)), ("r_arm", (0.0, 0.0, 1.0)),
              ("r_arm", (1.0, 0.0, 0.0)), ("r_leg", (0.0, 0.0, 1.0)),
              ("r_leg", (1.0, 0.0, 0.0)), ("r_arm", (diag, diag, 0.0))]
    if not 1 <= num_coarse <= len(coarse):
        raise ConfigError(f"num_coarse must be in [1, {len(coarse)}], got {num_coarse}")
    if vary not in ("direction", "phase"):
        raise ConfigError(f"fine variation must be 'direction' or 'phase', got {vary!r}")
    if vary == "direction" and not 1 <= fine_variants <= len(FINE_DIRECTIONS):
        raise ConfigError(f"fine_variants must be in [1, {len(FINE_DIRECTIONS)}] when varying direction, "
                          f"got {fine_variants}")
    out = []
    for limb, direction in coarse[:num_coarse]:
        for v in range(fine_variants):
            if vary == "direction":
                extra = dict(fine_direction=FINE_DIRECTIONS[v])
            else:
                extra = dict(fine_phase=2 * np.pi * v / fine_variants)
            out.append(ClassPattern(limb, direction, coarse_amp=coarse_amp, fine_amp=fine_amp, **extra))
    return out


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> list[SkeletonSequence]:
    """Seeded, class-balanced synthetic sequences (class-major order)."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    seqs = []
    for label, pattern in enumerate(spec.patterns):
        for i in range(spec.per_class):
            amp = 1.0 + spec.amp_jitter * rng.uniform(-1, 1)
            fine = 1.0 + spec.amp_jitter * rng.uniform(-1, 1)
            shift = float(rng.integers(-spec.shift_jitter, spec.shift_jitter + 1)) if spec.shift_jitter else 0.0
            coords = pattern_trajectory(pattern, spec.frames, amp, fine, shift)
            coords += spec.translate * rng.uniform(-1, 1, size=(1, 1, 3))
            coords += spec.noise * rng.standard_normal(coords.shape)
            seqs.append(SkeletonSequence(coords, label, f"c{label:02d}_{i:04d}"))
    return seqs
