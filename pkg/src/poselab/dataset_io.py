"""Dataset manifests, 7-Scenes / Cambridge Landmarks ingestion, LSTM windows.

Manifest file layout (tab separated, UTF-8)::

    POSELAB-MANIFEST <version>
    # name = <name>
    # split = train|test
    # source_format = seven_scenes|cambridge|synthetic
    # <provenance key> = <value>        (zero or more)
    <sequence_id> <frame_index> <path> <x> <y> <z> <qw> <qx> <qy> <qz> <synthetic 0|1>

Poses are camera-to-world and written with 17 significant digits, so a
write/read cycle reproduces every float exactly. Relative paths resolve
against the manifest's directory.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import DegenerateRotationError, Pose, UnitQuaternion, matrix_to_quaternion, normalize

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
_MAGIC = "POSELAB-MANIFEST"
SOURCE_FORMATS = ("seven_scenes", "cambridge", "synthetic")


class ManifestVersionError(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    sequence_id: str
    frame_index: int
    path: str
    pose: Pose
    synthetic: bool = False

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be non-negative, got {self.frame_index}")
        for name in ("sequence_id", "path"):
            if any(c in getattr(self, name) for c in "\t\n"):
                raise ValueError(f"{name} may not contain tabs or newlines")


@dataclass
class DatasetManifest:
    name: str
    split: str
    source_format: str
    entries: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    root: Optional[Path] = None
    skipped: int = 0

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if self.source_format not in SOURCE_FORMATS:
            raise ValueError(f"unknown source format {self.source_format!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def sequences(self) -> dict:
        out: dict = {}
        for e in self.entries:
            out.setdefault(e.sequence_id, []).append(e)
        return out

    def sort(self) -> None:
        self.entries.sort(key=lambda e: (e.sequence_id, e.frame_index, e.synthetic))

    def validate(self, check_paths: bool = False) -> None:
        last: dict = {}
        for e in self.entries:
            if e.synthetic:
                continue
            prev = last.get(e.sequence_id)
            if prev is not None and e.frame_index <= prev:
                raise ValueError(f"sequence {e.sequence_id}: frame_index {e.frame_index} after {prev}")
            last[e.sequence_id] = e.frame_index
        if check_paths:
            missing = [e.path for e in self.entries if not self.resolve(e).exists()]
            if missing:
                raise FileNotFoundError(f"{len(missing)} image(s) missing, first: {missing[0]}")

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p


# ---------------------------------------------------------------- manifest io

def _fmt(v: float) -> str:
    return format(v, ".17g")


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = [f"{_MAGIC} {MANIFEST_VERSION}",
             f"# name = {manifest.name}",
             f"# split = {manifest.split}",
             f"# source_format = {manifest.source_format}"]
    for k, v in manifest.provenance.items():
        lines.append(f"# {k} = {v}")
    for e in manifest.entries:
        q = e.pose.orientation
        fields = [e.sequence_id, str(e.frame_index), e.path,
                  *(_fmt(v) for v in e.pose.position),
                  _fmt(q.w), _fmt(q.x), _fmt(q.y), _fmt(q.z), "1" if e.synthetic else "0"]
        lines.append("\t".join(fields))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path, check_paths: bool = False) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith(_MAGIC):
        raise ParseError(f"{path}: not a manifest file")
    try:
        version = int(text[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError(f"{path}: bad header {text[0]!r}") from None
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(
            f"{path}: manifest version {version} is not supported (this reader handles version {MANIFEST_VERSION})")
    meta: dict = {}
    entries = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        parts = line.split("\t")
        if len(parts) != 11:
            raise ParseError(f"{path}:{lineno}: expected 11 fields, found {len(parts)}")
        try:
            nums = [float(v) for v in parts[3:10]]
            q = nums[3:]
            # stored floats are already unit-norm; keep them bit-exact
            orient = UnitQuaternion(*q)
            entries.append(ManifestEntry(parts[0], int(parts[1]), parts[2],
                                         Pose(tuple(nums[:3]), orient), parts[10] == "1"))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    name = meta.pop("name", path.stem)
    split = meta.pop("split", "train")
    fmt = meta.pop("source_format", "synthetic")
    m = DatasetManifest(name, split, fmt, entries, meta, root=path.parent)
    m.validate(check_paths=check_paths)
    return m


# ---------------------------------------------------------------- 7-Scenes

_SEQ_RE = re.compile(r"seq-?(\d+)$")
_FRAME_RE = re.compile(r"frame-(\d+)\.pose\.txt$")


def _split_sequences(root: Path, split: str, split_file) -> Optional[set]:
    if split_file is None:
        candidate = root / ("TrainSplit.txt" if split == "train" else "TestSplit.txt")
        if not candidate.exists():
            return None
        split_file = candidate
    names = set()
    for line in Path(split_file).read_text().split():
        m = re.search(r"(\d+)$", line.strip())
        if m:
            names.add(f"seq-{int(m.group(1)):02d}")
    return names


def _read_pose_matrix(path: Path) -> np.ndarray:
    rows = [r.split() for r in path.read_text().splitlines() if r.strip()]
    if len(rows) != 4 or any(len(r) != 4 for r in rows):
        raise ParseError(f"{path}: expected 4 rows of 4 numbers")
    M = np.array([[float(v) for v in r] for r in rows])
    if not np.all(np.isfinite(M)):
        raise ParseError(f"{path}: non-finite entries")
    if not np.allclose(M[3], [0, 0, 0, 1], atol=1e-6):
        raise ParseError(f"{path}: last row is not [0 0 0 1]")
    return M


def parse_seven_scenes(root, split: str = "train", split_file=None, invert: bool = False) -> DatasetManifest:
    """Read ``seq-NN/frame-NNNNNN.{color.png,pose.txt}`` under one scene.

    Matrices are taken as camera-to-world; ``invert=True`` flips them for
    deployments storing world-to-camera. Unusable frames are skipped with a
    warning and counted in ``manifest.skipped``.
    """
    root = Path(root)
    wanted = _split_sequences(root, split, split_file)
    entries = []
    skipped = 0
    seq_dirs = sorted(d for d in root.iterdir() if d.is_dir() and _SEQ_RE.search(d.name))
    for d in seq_dirs:
        seq_id = f"seq-{int(_SEQ_RE.search(d.name).group(1)):02d}"
        if wanted is not None and seq_id not in wanted:
            continue
        pose_files = {int(_FRAME_RE.search(p.name).group(1)): p
                      for p in d.iterdir() if _FRAME_RE.search(p.name)}
        color_files = {int(p.name.split(".")[0].split("-")[1]): p
                       for p in d.glob("frame-*.color.png")}
        for idx in sorted(set(color_files) | set(pose_files)):
            if idx not in pose_files:
                log.warning("%s frame %d: no pose file, skipped", seq_id, idx)
                skipped += 1
                continue
            if idx not in color_files:
                log.warning("%s frame %d: no color image, skipped", seq_id, idx)
                skipped += 1
                continue
            try:
                M = _read_pose_matrix(pose_files[idx])
                if invert:
                    if abs(np.linalg.det(M)) < 1e-12:
                        raise ParseError("matrix is not invertible")
                    M = np.linalg.inv(M)
                q = matrix_to_quaternion(M[:3, :3])
            except (ParseError, DegenerateRotationError, ValueError, np.linalg.LinAlgError) as exc:
                log.warning("%s frame %d: %s, skipped", seq_id, idx, exc)
                skipped += 1
                continue
            rel = color_files[idx].relative_to(root).as_posix()
            entries.append(ManifestEntry(seq_id, idx, rel, Pose(tuple(M[:3, 3]), q)))
    if skipped:
        log.warning("%s: %d frame(s) skipped", root, skipped)
    m = DatasetManifest(root.name, split, "seven_scenes", entries,
                        {"split_file": str(split_file) if split_file else "default",
                         "pose_inverted": str(bool(invert))},
                        root=root, skipped=skipped)
    m.sort()
    return m


# ---------------------------------------------------------------- Cambridge

def parse_cambridge_lines(lines: Iterable[str], header_lines: int = 3, source: str = "<lines>",
                          strict: bool = False) -> tuple:
    """Parse ``path X Y Z W P Q R`` records; returns (entries, skipped).

    Bad lines are logged with their line number and skipped, or raise
    :class:`ParseError` when ``strict``.
    """
    entries = []
    skipped = 0
    for lineno, line in enumerate(lines, start=1):
        if lineno <= header_lines or not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 8:
                raise ParseError(f"{source}:{lineno}: expected 8 fields (path + 7 numbers), found {len(parts)}")
            try:
                nums = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{source}:{lineno}: non-numeric pose field") from None
            try:
                q = normalize(nums[3:])
            except DegenerateRotationError:
                raise ParseError(f"{source}:{lineno}: near-zero quaternion") from None
        except ParseError as exc:
            if strict:
                raise
            log.warning("%s, line skipped", exc)
            skipped += 1
            continue
        path = parts[0]
        seq = path.split("/")[0] if "/" in path else "seq"
        m = re.search(r"(\d+)\D*$", path)
        idx = int(m.group(1)) if m else lineno
        entries.append(ManifestEntry(seq, idx, path, Pose(tuple(nums[:3]), q)))
    return entries, skipped


def parse_cambridge(root, split: str = "train") -> DatasetManifest:
    root = Path(root)
    split_path = root / f"dataset_{split}.txt"
    with open(split_path, encoding="utf-8") as fh:
        entries, skipped = parse_cambridge_lines(fh, source=str(split_path))
    m = DatasetManifest(root.name, split, "cambridge", entries,
                        {"split_file": split_path.name, "temporal_windows": "disabled"},
                        root=root, skipped=skipped)
    m.sort()
    return m


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class SequenceSample:
    """L consecutive entries of one sequence; the target is the last one."""

    entries: tuple

    @property
    def target(self) -> ManifestEntry:
        return self.entries[-1]

    @property
    def sequence_id(self) -> str:
        return self.entries[-1].sequence_id

    def __len__(self) -> int:
        return len(self.entries)


def window_count(n: int, length: int, stride: int = 1) -> int:
    return max(0, (n - length) // stride + 1)


def sequence_windows(manifest: DatasetManifest, length: int, stride: int = 1,
                     allow_unordered: bool = False, include_synthetic: bool = False) -> list:
    if length < 1:
        raise ValueError(f"window length must be >= 1, got {length}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if manifest.source_format == "cambridge" and not allow_unordered and length > 1:
        raise ValueError("Cambridge frames are subsampled; temporal windows need allow_unordered=True")
    out = []
    for seq_id, entries in manifest.sequences().items():
        frames = sorted((e for e in entries if include_synthetic or not e.synthetic),
                        key=lambda e: e.frame_index)
        for start in range(0, len(frames) - length + 1, stride):
            out.append(SequenceSample(tuple(frames[start:start + length])))
    return out


def with_entries(manifest: DatasetManifest, entries: Sequence[ManifestEntry]) -> DatasetManifest:
    return replace(manifest, entries=list(entries))
