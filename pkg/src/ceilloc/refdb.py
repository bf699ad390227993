"""Reference image database: domain types and file I/O.

The database is a flat manifest of pose-annotated ceiling images, optionally
paired with per-pixel sample-quality heat maps. Everything is read-only after
loading; loaders validate invariants eagerly so downstream stages can trust
their inputs.

File formats owned by this module:

* PGM     — binary ``P5``, maxval 255. The only mandatory image format.
* LUHM    — heat map container: magic ``LUHM``, little-endian u32 width and
            height, then width*height little-endian float32 values in [0, 1],
            row-major.
* manifest — one header line ``id,timestamp,image,x,y,theta,heatmap`` then one
            CSV record per entry. Paths are relative to the manifest file.
            An empty heatmap field means "no heat map".
* confusion matrix — text header ``rows cols`` then row-major whitespace
            separated scores.
* match list — one ``query_index,matched_timestamp`` record per line
            (comma or whitespace separated); the coarse localiser's
            "timestamp of the matched database image" interface.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

MANIFEST_HEADER = "id,timestamp,image,x,y,theta,heatmap"


class ManifestError(ValueError):
    """Malformed manifest or an entry violating a database invariant."""


class FormatError(ValueError):
    """Malformed binary/text container (PGM, LUHM, confusion matrix)."""


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@dataclass(frozen=True)
class Pose2:
    """Planar pose in the map frame: metres and radians, theta in (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def validate_gray(img: np.ndarray, what: str = "image") -> np.ndarray:
    """Check a 2D uint8 intensity grid and return it unchanged."""
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{what} must be a non-empty 2D array, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"{what} must be uint8, got {arr.dtype}")
    return arr


def validate_heatmap(hm: np.ndarray, what: str = "heat map") -> np.ndarray:
    arr = np.asarray(hm)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{what} must be a non-empty 2D array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{what} values outside [0, 1]")
    return arr.astype(np.float32, copy=False)


@dataclass(frozen=True)
class RefEntry:
    """One database entry: ceiling image + pose + timestamp (+ optional heat map)."""

    id: int
    timestamp: float
    image: np.ndarray
    pose: Pose2
    heatmap: np.ndarray | None = None

    def __post_init__(self):
        validate_gray(self.image, f"entry {self.id} image")
        if self.heatmap is not None:
            hm = validate_heatmap(self.heatmap, f"entry {self.id} heat map")
            if hm.shape != self.image.shape:
                raise ManifestError(
                    f"entry {self.id}: heat map {hm.shape[1]}x{hm.shape[0]} does not match "
                    f"image {self.image.shape[1]}x{self.image.shape[0]}"
                )
            object.__setattr__(self, "heatmap", hm)


@dataclass(frozen=True)
class RefDatabase:
    """Ordered reference entries plus optional metric priors.

    Entries are sorted by timestamp with unique ids; the database is immutable
    after construction and safe for concurrent readers.
    """

    entries: tuple[RefEntry, ...]
    ceiling_height: float | None = None
    default_scale: float | None = None

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate entry ids {dup}")
        for a, b in zip(entries, entries[1:]):
            if b.timestamp < a.timestamp:
                raise ManifestError(
                    f"timestamps not non-decreasing at entry {b.id} "
                    f"({b.timestamp} after {a.timestamp})"
                )
        if self.default_scale is not None and self.default_scale <= 0:
            raise ValueError("default_scale must be positive")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Query x reference similarity scores from the coarse localiser."""

    scores: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.scores, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"confusion matrix must be 2D non-empty, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("confusion matrix contains non-finite scores")
        object.__setattr__(self, "scores", arr)

    @property
    def rows(self) -> int:
        return self.scores.shape[0]

    @property
    def cols(self) -> int:
        return self.scores.shape[1]


# ---------------------------------------------------------------------------
# image / heat map containers


def load_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval 255."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (missing P5 magic)")
    # header tokens may be interleaved with '#' comments
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header fields {fields}") from e
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval} (need 255)")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad PGM dimensions {width}x{height}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise FormatError(f"{path}: truncated PGM payload")
    return pixels.reshape(height, width).copy()


def save_pgm(path: str | Path, img: np.ndarray) -> None:
    img = validate_gray(img)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


LUHM_MAGIC = b"LUHM"


def load_luhm(path: str | Path) -> np.ndarray:
    """Read a LUHM heat map file into a float32 array in [0, 1]."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != LUHM_MAGIC:
        raise FormatError(f"{path}: missing LUHM magic")
    width, height = struct.unpack_from("<II", data, 4)
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad LUHM dimensions {width}x{height}")
    expected = 12 + 4 * width * height
    if len(data) != expected:
        raise FormatError(f"{path}: LUHM payload is {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", count=width * height, offset=12)
    hm = values.reshape(height, width).astype(np.float32)
    return validate_heatmap(hm, f"{path}")


def save_luhm(path: str | Path, hm: np.ndarray) -> None:
    hm = validate_heatmap(hm)
    h, w = hm.shape
    with open(path, "wb") as f:
        f.write(LUHM_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(hm.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# manifest


def load_database(
    manifest_path: str | Path,
    ceiling_height: float | None = None,
    default_scale: float | None = None,
) -> RefDatabase:
    """Load, validate and timestamp-sort a reference database from a manifest.

    Every referenced image (and heat map, when present) is read eagerly;
    errors name the offending entry id.
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    lines = manifest_path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{manifest_path}: empty manifest")
    if lines[0].strip() != MANIFEST_HEADER:
        raise ManifestError(
            f"{manifest_path}: bad header {lines[0]!r}, expected {MANIFEST_HEADER!r}"
        )
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 7:
            raise ManifestError(
                f"{manifest_path}:{lineno}: expected 7 fields, got {len(parts)}"
            )
        try:
            entry_id = int(parts[0])
            timestamp = float(parts[1])
            x, y, theta = float(parts[3]), float(parts[4]), float(parts[5])
        except ValueError as e:
            raise ManifestError(f"{manifest_path}:{lineno}: unparseable record: {e}") from e
        image_path = base / parts[2]
        if not image_path.is_file():
            raise ManifestError(f"entry {entry_id}: missing image file {image_path}")
        image = load_pgm(image_path)
        heatmap = None
        if parts[6]:
            hm_path = base / parts[6]
            if not hm_path.is_file():
                raise ManifestError(f"entry {entry_id}: missing heat map file {hm_path}")
            heatmap = load_luhm(hm_path)
        entries.append(
            RefEntry(id=entry_id, timestamp=timestamp, image=image,
                     pose=Pose2(x, y, theta), heatmap=heatmap)
        )
    entries.sort(key=lambda e: e.timestamp)
    return RefDatabase(tuple(entries), ceiling_height=ceiling_height,
                       default_scale=default_scale)


def write_manifest(path: str | Path, rows: list[tuple]) -> None:
    """Write manifest records ``(id, timestamp, image_rel, x, y, theta, heatmap_rel)``.

    ``heatmap_rel`` may be None or "" for entries without a heat map. Floats
    are written with full round-trip precision.
    """
    out = [MANIFEST_HEADER]
    for entry_id, ts, img_rel, x, y, theta, hm_rel in rows:
        hm = hm_rel or ""
        out.append(f"{int(entry_id)},{float(ts)!r},{img_rel},{float(x)!r},{float(y)!r},{float(theta)!r},{hm}")
    Path(path).write_text("\n".join(out) + "\n")


def save_database(db: RefDatabase, out_dir: str | Path,
                  name: str = "manifest.csv") -> Path:
    """Write every entry's image/heat map plus a manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in db.entries:
        img_rel = f"ref_{e.id:05d}.pgm"
        save_pgm(out_dir / img_rel, e.image)
        hm_rel = ""
        if e.heatmap is not None:
            hm_rel = f"ref_{e.id:05d}.luhm"
            save_luhm(out_dir / hm_rel, e.heatmap)
        rows.append((e.id, e.timestamp, img_rel, e.pose.x, e.pose.y, e.pose.theta, hm_rel))
    manifest = out_dir / name
    write_manifest(manifest, rows)
    return manifest


def attach_heatmaps(db: RefDatabase, heatmaps: dict[int, np.ndarray]) -> RefDatabase:
    """Return a copy of the database with heat maps attached by entry id."""
    entries = tuple(
        replace(e, heatmap=heatmaps[e.id]) if e.id in heatmaps else e
        for e in db.entries
    )
    return RefDatabase(entries, ceiling_height=db.ceiling_height,
                       default_scale=db.default_scale)


# ---------------------------------------------------------------------------
# coarse-localiser inputs


def load_confusion_matrix(path: str | Path) -> ConfusionMatrix:
    tokens = Path(path).read_text().split()
    if len(tokens) < 3:
        raise FormatError(f"{path}: confusion matrix needs a 'rows cols' header and scores")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
    except ValueError as e:
        raise FormatError(f"{path}: bad confusion matrix header") from e
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: bad confusion matrix shape {rows}x{cols}")
    if len(tokens) != 2 + rows * cols:
        raise FormatError(
            f"{path}: expected {rows * cols} scores, found {len(tokens) - 2}"
        )
    scores = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    return ConfusionMatrix(scores.reshape(rows, cols))


def save_confusion_matrix(path: str | Path, cm: ConfusionMatrix) -> None:
    with open(path, "w") as f:
        f.write(f"{cm.rows} {cm.cols}\n")
        for row in cm.scores:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_match_list(path: str | Path) -> dict[int, float]:
    """Read ``query_index, matched_timestamp`` records into a dict."""
    matches: dict[int, float] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'query_index, timestamp'")
        try:
            q, ts = int(parts[0]), float(parts[1])
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: unparseable match record") from e
        if q in matches:
            raise FormatError(f"{path}:{lineno}: duplicate query index {q}")
        matches[q] = ts
    if not matches:
        raise FormatError(f"{path}: empty match list")
    return matches


def save_match_list(path: str | Path, matches: dict[int, float]) -> None:
    with open(path, "w") as f:
        for q in sorted(matches):
            f.write(f"{q},{matches[q]!r}\n")


def load_coarse(path: str | Path) -> ConfusionMatrix | dict[int, float]:
    """Sniff and load either a confusion matrix or a match list."""
    try:
        return load_confusion_matrix(path)
    except FormatError:
        return load_match_list(path)


# ---------------------------------------------------------------------------
# lookups


def best_match(cm: ConfusionMatrix, query_index: int) -> int:
    """Column with the maximal score in the query's row; ties go to the
    smallest index."""
    if not (0 <= query_index < cm.rows):
        raise IndexError(f"query index {query_index} out of range [0, {cm.rows})")
    return int(np.argmax(cm.scores[query_index]))


def lookup_ceiling(db: RefDatabase, matched_timestamp: float) -> RefEntry:
    """Entry taken most closely in time to the matched timestamp; ties go to
    the earlier entry."""
    if not db.entries:
        raise ValueError("empty database")
    best = min(db.entries, key=lambda e: (abs(e.timestamp - matched_timestamp), e.timestamp))
    return best


def neighbors(db: RefDatabase, center: RefEntry, k: int) -> list[RefEntry]:
    """Up to ``k`` entries nearest in time to ``center`` (inclusive), ordered
    by time distance; equidistant entries go earliest-first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(db.entries, key=lambda e: (abs(e.timestamp - center.timestamp), e.timestamp))
    return ordered[:k]
