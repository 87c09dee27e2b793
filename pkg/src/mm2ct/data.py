"""Synthetic co-registered (T1, T2, CT) phantoms with deliberate single-modality ambiguity.

Default tissue table (t1, t2, ct) in [0, 1]::

    background (0.00, 0.00, 0.00)
    soft       (0.60, 0.40, 0.40)
    fat        (0.85, 0.40, 0.15)   same t2 as soft, different ct
    fluid      (0.60, 0.90, 0.65)   same t1 as soft, different ct
    bone       (0.25, 0.15, 0.95)

Fat and fluid appear as randomly placed blobs inside the body, so neither
modality alone (nor the anatomical context) can tell which CT value a blob
carries.  Subject ``i`` is drawn from ``SeedSequence([seed, STREAM, i])`` and
therefore does not depend on how many subjects are generated.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .tensor_core.checkpoint import read_tensor, write_tensor

MODALITIES = ("t1", "t2", "ct")
STREAM_PHANTOM = 0x5048414E  # "PHAN"
SOFT, FAT, FLUID, BONE = 1, 2, 3, 4

DEFAULT_INTENSITIES = (
    (0.00, 0.00, 0.00),
    (0.60, 0.40, 0.40),
    (0.85, 0.40, 0.15),
    (0.60, 0.90, 0.65),
    (0.25, 0.15, 0.95),
)


@dataclass
class PhantomSpec:
    size: int = 64
    n_slices: int = 8
    intensities: tuple = DEFAULT_INTENSITIES
    noise_std: float = 0.02
    mr_bias: float = 0.05
    ct_bias: float = 0.02
    blobs: tuple = (2, 3)  # min/max fluid and fat blobs per subject
    split: tuple = (9, 2, 4)
    seed: int = 0

    def __post_init__(self):
        self.intensities = tuple(tuple(float(v) for v in row) for row in self.intensities)
        self.split = tuple(int(s) for s in self.split)
        self.blobs = tuple(int(b) for b in self.blobs)
        if self.size < 16 or self.size % 8:
            raise ValueError(f"phantom size must be a multiple of 8 and >= 16, got {self.size}")
        if len(self.intensities) != 5 or any(len(r) != 3 for r in self.intensities):
            raise ValueError("phantoms need 5 tissue classes given as (t1, t2, ct) triples")
        if any(not 0.0 <= v <= 1.0 for r in self.intensities for v in r):
            raise ValueError("tissue intensities must lie in [0, 1]")
        if self.n_slices < 1:
            raise ValueError("n_slices must be >= 1")

    @property
    def n_tissue_classes(self) -> int:
        return len(self.intensities)

    @property
    def n_subjects(self) -> int:
        return sum(self.split)

    def table(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=np.float64)

    def ambiguous_pairs(self) -> dict[str, list[tuple[int, int]]]:
        """Class pairs sharing one MR intensity while differing in CT."""
        tab = self.table()
        out: dict[str, list[tuple[int, int]]] = {"t1": [], "t2": []}
        for m, col in (("t1", 0), ("t2", 1)):
            for i in range(len(tab)):
                for j in range(i + 1, len(tab)):
                    if tab[i, col] == tab[j, col] and tab[i, 2] != tab[j, 2]:
                        out[m].append((i, j))
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def subject_rng(seed: int, index: int, stream: int = STREAM_PHANTOM) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def subject_name(i: int) -> str:
    return f"s{i:03d}"


# ---------------------------------------------------------------- rendering
def _ellipse(yy, xx, cy, cx, ry, rx, angle):
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def _bias_field(rng, n, amp):
    # smooth multiplicative field from a handful of low-frequency cosines
    yy, xx = np.mgrid[0:n, 0:n] / n
    f = np.zeros((n, n))
    for _ in range(3):
        ky, kx = rng.uniform(0.3, 1.5, 2)
        py, px = rng.uniform(0, 2 * np.pi, 2)
        f += np.cos(2 * np.pi * ky * yy + py) * np.cos(2 * np.pi * kx * xx + px)
    f /= max(np.abs(f).max(), 1e-12)
    return 1.0 + amp * f


def _subject_layout(rng, spec: PhantomSpec):
    """Random per-subject geometry; each shape carries a linear drift across slices."""
    n = spec.size
    c = n / 2
    body = dict(cy=c + rng.uniform(-2, 2), cx=c + rng.uniform(-2, 2),
                ry=n * rng.uniform(0.36, 0.44), rx=n * rng.uniform(0.40, 0.46),
                angle=rng.uniform(-0.2, 0.2), grow=rng.uniform(-0.06, 0.06))
    fat_ring = rng.uniform(0.08, 0.13)
    bones = []
    sep = rng.uniform(0.35, 0.5)
    for side in (-1, 1):
        bones.append(dict(cy=body["cy"] + rng.uniform(-3, 3), cx=body["cx"] + side * sep * body["rx"],
                          r=n * rng.uniform(0.06, 0.09), drift=rng.uniform(-1.5, 1.5, 2)))
    lo, hi = spec.blobs
    blobs = []
    for cls in (FLUID, FAT):
        for _ in range(rng.integers(lo, hi + 1)):
            rad = rng.uniform(0.0, 0.6)
            ang = rng.uniform(0, 2 * np.pi)
            blobs.append(dict(cls=cls,
                              cy=body["cy"] + rad * body["ry"] * np.sin(ang),
                              cx=body["cx"] + rad * body["rx"] * np.cos(ang),
                              ry=n * rng.uniform(0.09, 0.17), rx=n * rng.uniform(0.09, 0.17),
                              angle=rng.uniform(0, np.pi), drift=rng.uniform(-3, 3, 2),
                              z0=rng.uniform(0, 1), zw=rng.uniform(1.0, 2.0)))
    # interleave so neither class systematically paints over the other
    blobs = [blobs[i] for i in rng.permutation(len(blobs))]
    return body, fat_ring, bones, blobs


def _labels(spec: PhantomSpec, layout, z: float) -> np.ndarray:
    n = spec.size
    body, fat_ring, bones, blobs = layout
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    lab = np.zeros((n, n), dtype=np.int64)
    g = 1.0 + body["grow"] * (z - 0.5) * 2
    ry, rx = body["ry"] * g, body["rx"] * g
    outer = _ellipse(yy, xx, body["cy"], body["cx"], ry, rx, body["angle"])
    inner = _ellipse(yy, xx, body["cy"], body["cx"], ry * (1 - fat_ring), rx * (1 - fat_ring), body["angle"])
    lab[outer] = FAT
    lab[inner] = SOFT
    for b in blobs:
        # blobs swell and shrink along the slice axis
        s = 1.0 - ((z - b["z0"]) / b["zw"]) ** 2
        if s <= 0.05:
            continue
        s = np.sqrt(s)
        m = _ellipse(yy, xx, b["cy"] + b["drift"][0] * z, b["cx"] + b["drift"][1] * z,
                     b["ry"] * s, b["rx"] * s, b["angle"]) & inner
        lab[m] = b["cls"]
    for b in bones:
        m = _ellipse(yy, xx, b["cy"] + b["drift"][0] * z, b["cx"] + b["drift"][1] * z, b["r"], b["r"], 0.0)
        lab[m & inner] = BONE
    return lab


def render_subject(spec: PhantomSpec, index: int):
    """Return ``(labels[S,H,W], images{t1,t2,ct}[S,H,W])`` float32 in [0, 1]."""
    rng = subject_rng(spec.seed, index)
    layout = _subject_layout(rng, spec)
    tab = spec.table()
    S, n = spec.n_slices, spec.size
    zs = np.linspace(0.0, 1.0, S) if S > 1 else np.array([0.5])
    labels = np.stack([_labels(spec, layout, z) for z in zs])
    out = {}
    for col, m in enumerate(MODALITIES):
        amp = spec.ct_bias if m == "ct" else spec.mr_bias
        bias = _bias_field(rng, n, amp)
        noise = rng.standard_normal((S, n, n)) * spec.noise_std
        img = tab[labels, col] * bias[None] + noise
        out[m] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return labels, out


def split_of(spec: PhantomSpec) -> dict[str, str]:
    names = [subject_name(i) for i in range(spec.n_subjects)]
    a, b, _ = spec.split
    return {s: ("train" if i < a else "val" if i < a + b else "test") for i, s in enumerate(names)}


def phantom_generate(spec: PhantomSpec, out_dir: str, n_subjects: int | None = None,
                     pgm: bool = False) -> dict[str, str]:
    """Write ``out_dir/<subject>/<modality>/<slice>.ten`` plus ``split.txt`` and ``fingerprint.txt``."""
    n = spec.n_subjects if n_subjects is None else n_subjects
    if n < 1:
        raise ValueError("n_subjects must be >= 1")
    if n != spec.n_subjects:
        spec = PhantomSpec(**{**_fields(spec), "split": _rescale_split(spec.split, n)})
    os.makedirs(out_dir, exist_ok=True)
    split = split_of(spec)
    for i in range(n):
        name = subject_name(i)
        _, imgs = render_subject(spec, i)
        for m in MODALITIES:
            d = os.path.join(out_dir, name, m)
            os.makedirs(d, exist_ok=True)
            for k in range(spec.n_slices):
                write_tensor(os.path.join(d, f"{k:03d}.ten"), imgs[m][k][None])
                if pgm:
                    export_pgm(imgs[m][k], os.path.join(d, f"{k:03d}.pgm"))
    with open(os.path.join(out_dir, "split.txt"), "w") as fh:
        for s, part in split.items():
            fh.write(f"{s} {part}\n")
    with open(os.path.join(out_dir, "fingerprint.txt"), "w") as fh:
        fh.write(spec.fingerprint() + "\n")
    return split


def _fields(spec):
    return asdict(spec)


def _rescale_split(split, n):
    a, b, c = split
    tot = a + b + c
    test = max(1, round(n * c / tot)) if n > 1 else 0
    val = min(round(n * b / tot), n - test - 1) if n > 2 else 0
    return (n - test - val, val, test)


# ---------------------------------------------------------------- loading
def read_split(root: str) -> dict[str, str]:
    out = {}
    with open(os.path.join(root, "split.txt")) as fh:
        for line in fh:
            if line.strip():
                s, part = line.split()
                out[s] = part
    return out


def read_fingerprint(root: str) -> str | None:
    p = os.path.join(root, "fingerprint.txt")
    if not os.path.exists(p):
        return None
    with open(p) as fh:
        return fh.read().strip()


def list_slices(root: str, subject: str) -> list[str]:
    d = os.path.join(root, subject, "ct")
    return sorted(f for f in os.listdir(d) if f.endswith(".ten"))


def load_split(root: str, part: str = "train"):
    """Stack one split into ``mr[N, 2, H, W]``, ``ct[N, 1, H, W]`` in model range [-1, 1].

    Also returns the list of ``subject/ct/slice`` relative paths, one per row.
    """
    split = read_split(root)
    mr, ct, keys = [], [], []
    for s in sorted(k for k, v in split.items() if v == part):
        for f in list_slices(root, s):
            t1 = read_tensor(os.path.join(root, s, "t1", f))
            t2 = read_tensor(os.path.join(root, s, "t2", f))
            c = read_tensor(os.path.join(root, s, "ct", f))
            mr.append(np.concatenate([t1, t2], axis=0))
            ct.append(c)
            keys.append(f"{s}/ct/{f}")
    if not keys:
        raise ValueError(f"no {part!r} subjects under {root}")
    return to_model(np.stack(mr)), to_model(np.stack(ct)), keys


def to_model(x):
    return (2.0 * np.asarray(x, dtype=np.float32) - 1.0).astype(np.float32)


def from_model(x):
    return np.clip((np.asarray(x, dtype=np.float64) + 1.0) * 0.5, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------- image export
def pgm_bytes(img) -> bytes:
    """Binary P5 greyscale, [0,1] -> [0,255] with clamping and round-half-up."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"PGM export needs a 2-d image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("PGM export needs finite values")
    q = np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    h, w = q.shape
    return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()


def export_pgm(img, path: str):
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
