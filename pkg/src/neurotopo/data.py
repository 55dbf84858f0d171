"""Recordings on disk, chunking, electrode layout files and the synthetic EEG generator.

On-disk container: a directory holding ``manifest.json``, a layout text file
and one ``.eegr`` blob per recording. A blob is an 18-byte little-endian
header (magic ``EEGR``, u16 version, u32 channels, u64 samples) followed by
channel-major float32 samples.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import ElectrodeLayout, fibonacci_layout
from .spectral import CANONICAL_BANDS, TimeSeries

BLOB_MAGIC = b"EEGR"
BLOB_VERSION = 1
BLOB_HEADER = struct.Struct("<4sHIQ")
MANIFEST_NAME = "manifest.json"
LAYOUT_NAME = "layout.txt"
ENJOYMENT_THRESHOLD = 5


@dataclass
class Recording:
    user_id: int
    song_id: int
    eeg: TimeSeries
    enjoyment_rating: int
    familiarity_rating: int | None = None


@dataclass(frozen=True)
class ChunkSpec:
    duration_s: float = 5.0
    hop_s: float = 5.0

    def __post_init__(self):
        if not self.duration_s > 0 or not self.hop_s > 0:
            raise ValidationError(f"chunk duration and hop must be positive, got {self.duration_s}, {self.hop_s}")


@dataclass
class Chunk:
    eeg: TimeSeries
    user_id: int
    song_id: int
    index: int


def chunk(recording: Recording, spec: ChunkSpec = ChunkSpec()) -> list:
    """Split into floor((T - dur) / hop) + 1 windows; the trailing remainder is dropped."""
    fs = recording.eeg.sample_rate_hz
    n = int(round(spec.duration_s * fs))
    hop = int(round(spec.hop_s * fs))
    total = recording.eeg.n_times
    if total < n:
        raise ValidationError(
            f"recording (user {recording.user_id}, song {recording.song_id}) has {total} samples, "
            f"shorter than one {spec.duration_s:g} s chunk ({n} samples)"
        )
    count = (total - n) // hop + 1
    x = recording.eeg.samples
    return [
        Chunk(TimeSeries(x[:, i * hop : i * hop + n], fs), recording.user_id, recording.song_id, i)
        for i in range(count)
    ]


def _check_rating(value, what, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or not 1 <= value <= 9:
        raise ValidationError(f"{what} must be an integer in 1..9, got {value!r}")
    return int(value)


# layout files ---------------------------------------------------------------


def write_layout(path, layout: ElectrodeLayout):
    lines = [f"{lab}, {x!r}, {y!r}, {z!r}" for lab, (x, y, z) in zip(layout.labels, layout.positions.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_layout(path) -> ElectrodeLayout:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"layout file not found: {path}")
    labels, pos = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValidationError(f"{path}:{lineno}: expected 'label, x, y, z'")
        try:
            pos.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        labels.append(parts[0])
    return ElectrodeLayout(np.array(pos), tuple(labels))


def read_ratings_csv(path) -> dict:
    """{(user, song): enjoyment} from a CSV with a ``user,song,enjoyment`` header."""
    import csv

    path = Path(path)
    if not path.exists():
        raise ValidationError(f"ratings file not found: {path}")
    out = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"user", "song", "enjoyment"} - set(reader.fieldnames or ())
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, 2):
            try:
                pair = (int(row["user"]), int(row["song"]))
                value = int(row["enjoyment"])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if pair in out:
                raise ValidationError(f"{path}:{lineno}: duplicate (user, song) {pair}")
            out[pair] = _check_rating(value, f"{path}:{lineno} enjoyment")
    return out


# blobs ----------------------------------------------------------------------


def encode_blob(samples: np.ndarray) -> bytes:
    x = np.ascontiguousarray(samples, dtype="<f4")
    return BLOB_HEADER.pack(BLOB_MAGIC, BLOB_VERSION, x.shape[0], x.shape[1]) + x.tobytes()


def decode_blob(raw: bytes, where="blob") -> np.ndarray:
    if len(raw) < BLOB_HEADER.size:
        raise ValidationError(f"{where}: truncated header")
    magic, version, channels, samples = BLOB_HEADER.unpack_from(raw)
    if magic != BLOB_MAGIC:
        raise ValidationError(f"{where}: bad magic {magic!r}")
    if version != BLOB_VERSION:
        raise ValidationError(f"{where}: unsupported version {version}")
    expected = BLOB_HEADER.size + 4 * channels * samples
    if len(raw) != expected:
        raise ValidationError(f"{where}: size {len(raw)} does not match header ({channels} x {samples})")
    return np.frombuffer(raw, dtype="<f4", offset=BLOB_HEADER.size).reshape(channels, samples)


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# datasets -------------------------------------------------------------------


def prepare_output_dir(path, force=False) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ValidationError(f"output directory {path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def save_dataset(path, recordings, layout: ElectrodeLayout, name="dataset", force=False) -> Path:
    """Write blobs, layout and manifest. ``recordings`` may be any iterable (streamed)."""
    path = prepare_output_dir(path, force)
    write_layout(path / LAYOUT_NAME, layout)
    entries = []
    rate = channels = None
    for rec in recordings:
        if rate is None:
            rate, channels = rec.eeg.sample_rate_hz, rec.eeg.n_channels
        elif rec.eeg.sample_rate_hz != rate or rec.eeg.n_channels != channels:
            raise ValidationError(f"recording (user {rec.user_id}, song {rec.song_id}) differs in rate or channel count")
        fname = f"u{rec.user_id:03d}_s{rec.song_id:03d}.eegr"
        blob = encode_blob(rec.eeg.samples)
        atomic_write_bytes(path / fname, blob)
        entries.append(
            {
                "user": int(rec.user_id),
                "song": int(rec.song_id),
                "path": fname,
                "enjoyment": int(rec.enjoyment_rating),
                "familiarity": None if rec.familiarity_rating is None else int(rec.familiarity_rating),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )
    if channels is not None and channels != len(layout):
        raise ValidationError(f"layout has {len(layout)} electrodes, recordings have {channels} channels")
    manifest = {
        "name": name,
        "format_version": BLOB_VERSION,
        "channels": channels,
        "sample_rate_hz": rate,
        "layout": LAYOUT_NAME,
        "recordings": entries,
    }
    atomic_write_text(path / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class DatasetHandle:
    """A validated manifest; blobs are read and checksummed on demand."""

    root: Path
    name: str
    channels: int
    sample_rate_hz: float
    layout_path: Path
    entries: list

    def layout(self) -> ElectrodeLayout:
        layout = read_layout(self.layout_path)
        if len(layout) != self.channels:
            raise ValidationError(f"{self.layout_path}: {len(layout)} electrodes, manifest says {self.channels} channels")
        return layout

    def ratings(self) -> dict:
        return {(e["user"], e["song"]): e["enjoyment"] for e in self.entries}

    def load(self, entry) -> Recording:
        blob_path = self.root / entry["path"]
        if not blob_path.exists():
            raise ValidationError(f"missing blob: {blob_path}")
        raw = blob_path.read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        if digest != entry["sha256"]:
            raise ValidationError(f"{blob_path}: sha256 mismatch (manifest {entry['sha256']}, file {digest})")
        x = decode_blob(raw, str(blob_path))
        if x.shape[0] != self.channels:
            raise ValidationError(f"{blob_path}: {x.shape[0]} channels, manifest says {self.channels}")
        return Recording(entry["user"], entry["song"], TimeSeries(x, self.sample_rate_hz), entry["enjoyment"], entry["familiarity"])

    def __iter__(self):
        for e in self.entries:
            yield self.load(e)

    def __len__(self):
        return len(self.entries)


def open_dataset(path) -> DatasetHandle:
    root = Path(path)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise ValidationError(f"no {MANIFEST_NAME} in {root}")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{mpath}: invalid JSON ({exc})") from None
    for key in ("channels", "sample_rate_hz", "layout", "recordings"):
        if key not in m:
            raise ValidationError(f"{mpath}: missing field {key!r}")
    seen = set()
    for i, e in enumerate(m["recordings"]):
        where = f"{mpath}: recordings[{i}]"
        for key in ("user", "song", "path", "enjoyment", "sha256"):
            if key not in e:
                raise ValidationError(f"{where}: missing field {key!r}")
        _check_rating(e["enjoyment"], f"{where}.enjoyment")
        _check_rating(e.get("familiarity"), f"{where}.familiarity", allow_none=True)
        e.setdefault("familiarity", None)
        pair = (e["user"], e["song"])
        if pair in seen:
            raise ValidationError(f"{where}: duplicate (user, song) {pair}")
        seen.add(pair)
        if not (root / e["path"]).exists():
            raise ValidationError(f"{where}: missing blob {root / e['path']}")
    return DatasetHandle(root, m.get("name", root.name), int(m["channels"]), float(m["sample_rate_hz"]), root / m["layout"], m["recordings"])


def load_dataset(path) -> list:
    return list(open_dataset(path))


# synthetic generator --------------------------------------------------------


@dataclass
class SyntheticConfig:
    """Generator parameters.

    Each song has one phase-locked oscillation per band with a smooth spatial
    amplitude field. ``confound`` blends that field with a copy rotated by a
    random rotation of the head sphere drawn per user and band (0: shared by all users,
    1: fully user-specific). Each user adds a fingerprint oscillation per band
    with its own spatial field and random phase.

    With ``enjoy_gate`` on, a pair rated above 5 carries the canonical field
    with weight ``g_high``; other pairs carry a fixed rotated variant (shared
    by all low raters) with weight ``g_low``. The remaining weight stays on
    the user-rotated field.
    """

    users: int = 20
    songs: int = 10
    duration_s: float = 60.0
    channels: int = 125
    sample_rate_hz: float = 125.0
    confound: float = 1.0
    enjoy_gate: bool = False
    g_high: float = 0.4
    g_low: float = 0.8
    song_amplitude: float = 1.0
    user_strength: float = 1.0
    noise: float = 0.5
    bumps: int = 3
    bump_width_rad: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if self.users < 2 or self.songs < 2:
            raise ValidationError(f"need at least 2 users and 2 songs, got {self.users} users, {self.songs} songs")
        for name in ("confound", "g_high", "g_low"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.channels < 3:
            raise ValidationError(f"need at least 3 channels, got {self.channels}")
        if not self.duration_s > 0 or not self.sample_rate_hz > 0:
            raise ValidationError("duration_s and sample_rate_hz must be positive")
        if self.noise < 0 or self.user_strength < 0 or self.song_amplitude < 0:
            raise ValidationError("noise, user_strength and song_amplitude must be non-negative")

    def to_dict(self):
        return asdict(self)


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass
class SmoothField:
    """Sum of von Mises-Fisher bumps on the sphere plus a positive floor."""

    centers: np.ndarray  # m x 3
    weights: np.ndarray
    width: float
    floor: float = 0.2

    def __call__(self, pos):
        k = 1.0 / self.width**2
        return self.floor + np.exp(k * (pos @ self.centers.T - 1.0)) @ self.weights

    @classmethod
    def random(cls, rng, bumps, width):
        c = rng.standard_normal((bumps, 3))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        return cls(c, np.ones(bumps), width)


def _band_frequency(rng, band, nyquist):
    # band power integrates 1 Hz bins over lo <= f < hi, so the captured span
    # is centred half a bin below the band midpoint; staying within a quarter
    # of that span keeps the window's leakage inside the band
    hi = min(band.hi_hz, nyquist * 0.95)
    centre = (band.lo_hz + hi - 1.0) / 2
    half = 0.25 * (hi - band.lo_hz - 1.0)
    return rng.uniform(centre - half, centre + half)


class Synthesizer:
    """Streams synthetic recordings one (user, song) pair at a time.

    All per-song and per-user structure is drawn up front from ``seed``; each
    recording's phases and noise come from a generator seeded by
    (seed, user, song), so any subset can be regenerated independently.
    """

    def __init__(self, config: SyntheticConfig, bands=CANONICAL_BANDS):
        self.config = cfg = config
        self.bands = tuple(bands)
        self.layout = fibonacci_layout(cfg.channels)
        rng = np.random.default_rng(cfg.seed)
        nyq = cfg.sample_rate_hz / 2
        nb = len(self.bands)
        self.song_fields = [[SmoothField.random(rng, cfg.bumps, cfg.bump_width_rad) for _ in range(nb)] for _ in range(cfg.songs)]
        self.song_freqs = np.array([[_band_frequency(rng, b, nyq) for b in self.bands] for _ in range(cfg.songs)])
        self.song_phases = rng.uniform(0, 2 * np.pi, (cfg.songs, nb))
        self.user_fields = [[SmoothField.random(rng, cfg.bumps, cfg.bump_width_rad) for _ in range(nb)] for _ in range(cfg.users)]
        self.user_freqs = np.array([[_band_frequency(rng, b, nyq) for b in self.bands] for _ in range(cfg.users)])
        self.user_rotations = [[random_rotation(rng) for _ in range(nb)] for _ in range(cfg.users)]
        self.low_rotation = random_rotation(rng)
        self.ratings = {(u, s): int(r) for (u, s), r in np.ndenumerate(rng.integers(1, 10, (cfg.users, cfg.songs)))}
        self.familiarity = {(u, s): int(r) for (u, s), r in np.ndenumerate(rng.integers(1, 10, (cfg.users, cfg.songs)))}
        # ground truth, kept separate from the evaluation-side dichotomizer
        self.high_pairs = frozenset(p for p, r in self.ratings.items() if r > ENJOYMENT_THRESHOLD)

    def song_gains(self, user: int, song: int) -> np.ndarray:
        """bands x channels amplitude multiplier of the song oscillations."""
        cfg = self.config
        pos = self.layout.positions
        low_pos = pos @ self.low_rotation
        gains = np.empty((len(self.bands), len(pos)))
        for b, fld in enumerate(self.song_fields[song]):
            entangled = fld(pos @ self.user_rotations[user][b])
            if cfg.enjoy_gate:
                if (user, song) in self.high_pairs:
                    gains[b] = cfg.g_high * fld(pos) + (1 - cfg.g_high) * entangled
                else:
                    gains[b] = cfg.g_low * fld(low_pos) + (1 - cfg.g_low) * entangled
            else:
                gains[b] = (1 - cfg.confound) * fld(pos) + cfg.confound * entangled
        return gains

    def user_gains(self, user: int) -> np.ndarray:
        pos = self.layout.positions
        return np.stack([fld(pos) for fld in self.user_fields[user]])

    def recording(self, user: int, song: int) -> Recording:
        cfg = self.config
        n = int(round(cfg.duration_s * cfg.sample_rate_hz))
        t = np.arange(n) / cfg.sample_rate_hz
        rng = np.random.default_rng([cfg.seed, user, song])
        x = np.zeros((cfg.channels, n))
        sg = self.song_gains(user, song)
        for b in range(len(self.bands)):
            wave = np.sin(2 * np.pi * self.song_freqs[song, b] * t + self.song_phases[song, b])
            x += np.outer(cfg.song_amplitude * sg[b], wave)
        ug = self.user_gains(user)
        user_phase = rng.uniform(0, 2 * np.pi, len(self.bands))
        if cfg.user_strength > 0:
            for b in range(len(self.bands)):
                wave = np.sin(2 * np.pi * self.user_freqs[user, b] * t + user_phase[b])
                x += np.outer(cfg.user_strength * ug[b], wave)
        noise = rng.standard_normal((cfg.channels, n))
        if cfg.noise > 0:
            x += cfg.noise * noise
        return Recording(user, song, TimeSeries(x, cfg.sample_rate_hz), self.ratings[(user, song)], self.familiarity[(user, song)])

    def pairs(self):
        return [(u, s) for u in range(self.config.users) for s in range(self.config.songs)]

    def __iter__(self):
        for u, s in self.pairs():
            yield self.recording(u, s)


def synthesize(config: SyntheticConfig) -> list:
    return list(Synthesizer(config))
