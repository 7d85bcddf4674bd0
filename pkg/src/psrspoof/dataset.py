"""On-disk scenario pairs and seeded corpus generation.

Pair file layout (little-endian, no padding)::

    offset  size        field
    0       4           magic b"PSRS"
    4       2           format version (u16)
    6       2           reserved, zero (u16)
    8       4           K, epochs (u32)
    12      4           L_max, channel slots (u32)
    16      8           epoch interval in seconds (f64)
    24      8           scenario seed (u64)
    32      80          attack block:
                          kind (u8: 0 targeted, 1 regional), 7 pad bytes,
                          start_epoch (i64), peak_epoch (i64),
                          duration_s, shift_m, rotation_deg, bearing_deg (f64),
                          spoofer position x, y, z (f64)
    112     8*K*L       clean PSR, row-major (K, L), f64
    ..      8*K*L       spoofed PSR
    ..      ceil(K*L/8) clean presence, bit-packed (numpy packbits, big bit order)
    ..      ceil(K*L/8) spoofed presence, bit-packed
    ..      ceil(K/8)   spoofed labels, bit-packed

so a file holds exactly ``112 + 16*K*L + 2*ceil(K*L/8) + ceil(K/8)`` bytes.
Clean-member labels are all negative and are not stored.

A corpus is a directory with ``train/`` and ``test/`` pair files and a
``manifest.txt`` written after every pair file exists.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import Config
from .generator import usable_pair
from .signal import PsrSequence
from .spoofer import AttackKind, AttackSpec, ScenarioPair

PAIR_MAGIC = b"PSRS"
PAIR_VERSION = 1
MANIFEST_MAGIC = "PSRS-MANIFEST"
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sHHIIdQ")
_ATTACK = struct.Struct("<B7xqqdddd3d")
HEADER_SIZE = _HEADER.size + _ATTACK.size
_KINDS = (AttackKind.TARGETED, AttackKind.REGIONAL)


class CorruptFileError(ValueError):
    """A pair or manifest file does not match the documented layout."""


def pair_file_size(K: int, L: int) -> int:
    return HEADER_SIZE + 16 * K * L + 2 * math.ceil(K * L / 8) + math.ceil(K / 8)


def encode_pair(pair: ScenarioPair) -> bytes:
    clean, spoofed, spec = pair.clean, pair.spoofed, pair.attack
    K, L = clean.psr_m.shape
    if spoofed.psr_m.shape != (K, L):
        raise ValueError("pair members have different shapes")
    parts = [
        _HEADER.pack(PAIR_MAGIC, PAIR_VERSION, 0, K, L, float(clean.epoch_interval_s), int(clean.seed)),
        _ATTACK.pack(_KINDS.index(spec.kind), spec.start_epoch, spec.peak_epoch, spec.duration_s,
                     spec.shift_m, spec.rotation_deg, spec.bearing_deg, *spec.spoofer_position),
        np.ascontiguousarray(clean.psr_m, dtype="<f8").tobytes(),
        np.ascontiguousarray(spoofed.psr_m, dtype="<f8").tobytes(),
        np.packbits(clean.present.astype(bool).ravel()).tobytes(),
        np.packbits(spoofed.present.astype(bool).ravel()).tobytes(),
        np.packbits(spoofed.labels.astype(bool)).tobytes(),
    ]
    return b"".join(parts)


def decode_pair(data: bytes, source: str = "<bytes>") -> ScenarioPair:
    if len(data) < HEADER_SIZE:
        raise CorruptFileError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, _, K, L, dt, seed = _HEADER.unpack_from(data, 0)
    if magic != PAIR_MAGIC:
        raise CorruptFileError(f"{source}: bad magic {magic!r}")
    if version != PAIR_VERSION:
        raise CorruptFileError(f"{source}: unsupported version {version}")
    expected = pair_file_size(K, L)
    if len(data) != expected:
        raise CorruptFileError(f"{source}: expected {expected} bytes for K={K}, L={L}, found {len(data)}")
    kind, start, peak, dur, shift, rot, bearing, sx, sy, sz = _ATTACK.unpack_from(data, _HEADER.size)
    if kind >= len(_KINDS):
        raise CorruptFileError(f"{source}: unknown attack kind code {kind}")
    spec = AttackSpec(_KINDS[kind], start, dur, shift, rot, bearing, peak, (sx, sy, sz), dt)
    off = HEADER_SIZE
    n = K * L

    def floats():
        nonlocal off
        a = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(K, L).astype(np.float64)
        off += 8 * n
        return a

    def bits(count, shape):
        nonlocal off
        nbytes = math.ceil(count / 8)
        a = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=off), count=count)
        off += nbytes
        return a.astype(bool).reshape(shape)

    psr_clean, psr_spoofed = floats(), floats()
    pres_clean, pres_spoofed = bits(n, (K, L)), bits(n, (K, L))
    labels = bits(K, (K,))
    clean = PsrSequence(psr_clean, pres_clean, np.zeros(K, dtype=bool), seed, dt, spec)
    spoofed = PsrSequence(psr_spoofed, pres_spoofed, labels, seed, dt, spec)
    return ScenarioPair(clean, spoofed, spec)


def write_pair(pair: ScenarioPair, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_pair(pair))
    except OSError as exc:
        raise OSError(f"cannot write pair file {path}: {exc.strerror or exc}") from exc


def read_pair(path: str | Path) -> ScenarioPair:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read pair file {path}: {exc.strerror or exc}") from exc
    return decode_pair(data, str(path))


# -- corpora --------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    split: str          # "train" or "test"
    index: int
    seed: int
    kind: AttackKind
    member: str         # test sequences use one member: "spoofed" or "clean"; training uses "pair"
    start_epoch: int
    duration_s: float
    shift_m: float
    rotation_deg: float
    spoofed_epochs: int
    epochs: int
    file: str

    COLUMNS = ("split", "index", "seed", "kind", "member", "start_epoch", "duration_s", "shift_m",
               "rotation_deg", "spoofed_epochs", "epochs", "file")

    def render(self) -> str:
        return " ".join([self.split, str(self.index), str(self.seed), self.kind.value, self.member,
                         str(self.start_epoch), repr(self.duration_s), repr(self.shift_m),
                         repr(self.rotation_deg), str(self.spoofed_epochs), str(self.epochs), self.file])

    @classmethod
    def parse(cls, line: str) -> "ManifestEntry":
        f = line.split()
        if len(f) != len(cls.COLUMNS):
            raise CorruptFileError(f"manifest row has {len(f)} fields: {line!r}")
        return cls(f[0], int(f[1]), int(f[2]), AttackKind(f[3]), f[4], int(f[5]), float(f[6]),
                   float(f[7]), float(f[8]), int(f[9]), int(f[10]), f[11])


@dataclass
class CorpusManifest:
    config_hash: str
    master_seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    format_version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def test_spoofed_epochs(self) -> int:
        return sum(e.spoofed_epochs for e in self.split("test") if e.member == "spoofed")

    @property
    def test_total_epochs(self) -> int:
        return sum(e.epochs for e in self.split("test"))

    @property
    def test_spoofed_fraction(self) -> float:
        total = self.test_total_epochs
        return self.test_spoofed_epochs / total if total else 0.0

    def render(self) -> str:
        train, test = self.split("train"), self.split("test")
        header = [
            f"{MANIFEST_MAGIC} {self.format_version}",
            f"config_hash = {self.config_hash}",
            f"master_seed = {self.master_seed}",
            f"train_count = {len(train)}",
            f"test_count = {len(test)}",
            f"train_targeted = {sum(e.kind is AttackKind.TARGETED for e in train)}",
            f"train_regional = {sum(e.kind is AttackKind.REGIONAL for e in train)}",
            f"test_spoofed_epochs = {self.test_spoofed_epochs}",
            f"test_total_epochs = {self.test_total_epochs}",
            f"test_spoofed_fraction = {self.test_spoofed_fraction!r}",
            "columns = " + " ".join(ManifestEntry.COLUMNS),
            "---",
        ]
        return "\n".join(header + [e.render() for e in self.entries]) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.render())

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        try:
            lines = path.read_text().splitlines()
        except OSError as exc:
            raise OSError(f"cannot read manifest {path}: {exc.strerror or exc}") from exc
        if not lines or not lines[0].startswith(MANIFEST_MAGIC + " "):
            raise CorruptFileError(f"{path}: not a corpus manifest")
        version = int(lines[0].split()[1])
        if version != MANIFEST_VERSION:
            raise CorruptFileError(f"{path}: unsupported manifest version {version}")
        try:
            sep = lines.index("---")
        except ValueError:
            raise CorruptFileError(f"{path}: manifest header is not terminated") from None
        header = dict(line.split(" = ", 1) for line in lines[1:sep])
        entries = [ManifestEntry.parse(line) for line in lines[sep + 1:] if line.strip()]
        m = cls(header["config_hash"], int(header["master_seed"]), entries, version)
        if int(header["train_count"]) != len(m.split("train")) or \
                int(header["test_count"]) != len(m.split("test")):
            raise CorruptFileError(f"{path}: manifest counts do not match its rows")
        return m


def scenario_seed(master_seed: int, split: int, index: int, attempt: int) -> int:
    """Independent 63-bit scenario seed derived from the master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(split, index, attempt))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def balanced_kinds(count: int) -> list[AttackKind]:
    """Alternate targeted/regional so any prefix is balanced to within one."""
    return [_KINDS[i % 2] for i in range(count)]


def choose_test_members(kinds: list[AttackKind], fraction: float, master_seed: int) -> list[str]:
    """Pick which test scenarios contribute their spoofed member.

    Within each attack kind, ``round(fraction * n)`` scenarios are chosen by a
    seeded permutation; the rest contribute the clean member.
    """
    rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(99,)))
    members = ["clean"] * len(kinds)
    for kind in _KINDS:
        idx = np.array([i for i, k in enumerate(kinds) if k is kind], dtype=int)
        chosen = rng.permutation(idx)[: int(round(fraction * len(idx)))]
        for i in chosen:
            members[int(i)] = "spoofed"
    return members


def _generate_one(job):
    cfg, master_seed, split_code, index, kind, out_path = job
    seed, pair = usable_pair(cfg, lambda a: scenario_seed(master_seed, split_code, index, a), kind)
    write_pair(pair, out_path)
    spec = pair.attack
    return seed, spec, int(pair.spoofed.labels.sum()), pair.clean.epochs


def generate_corpus(cfg: Config, train_count: int, test_count: int, seed: int,
                    out_dir: str | Path, threads: int | None = None) -> CorpusManifest:
    """Write ``train_count`` training pairs and ``test_count`` test scenarios plus a manifest."""
    if train_count < 1 or test_count < 1:
        raise ValueError("train and test counts must be at least 1")
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    jobs, meta = [], []
    for split, code, count in (("train", 0, train_count), ("test", 1, test_count)):
        kinds = balanced_kinds(count)
        members = (["pair"] * count if split == "train"
                   else choose_test_members(kinds, cfg.test_attack_fraction, seed))
        for i, kind in enumerate(kinds):
            rel = f"{split}/{i:06d}.psrs"
            jobs.append((cfg, seed, code, i, kind, out / rel))
            meta.append((split, i, kind, members[i], rel))
    workers = threads if threads else (os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_generate_one(j) for j in jobs]
    entries = []
    for (split, i, kind, member, rel), (s, spec, n_spoofed, K) in zip(meta, results):
        entries.append(ManifestEntry(split, i, s, kind, member, spec.start_epoch, spec.duration_s,
                                     spec.shift_m, spec.rotation_deg, n_spoofed, K, rel))
    seeds = [e.seed for e in entries]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("scenario seed collision; choose another master seed")
    manifest = CorpusManifest(cfg.generator_hash(), seed, entries)
    manifest.save(out / "manifest.txt")
    return manifest


@dataclass
class Corpus:
    """A generated corpus directory with its manifest."""
    root: Path
    manifest: CorpusManifest

    @classmethod
    def open(cls, root: str | Path) -> "Corpus":
        root = Path(root)
        return cls(root, CorpusManifest.load(root / "manifest.txt"))

    def pairs(self, split: str = "train"):
        for e in self.manifest.split(split):
            yield e, read_pair(self.root / e.file)

    def test_sequences(self):
        """(entry, sequence) for each test scenario, using its chosen member."""
        for e, pair in self.pairs("test"):
            yield e, pair.spoofed if e.member == "spoofed" else pair.clean
