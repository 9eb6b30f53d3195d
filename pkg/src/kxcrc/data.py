"""Feature sets, view pairing, normalization and synthetic cross-view data.

Feature CSV layout: header ``id,cam,f0,...,f{m-1}``, one row per image.
A dataset manifest (JSON) names the CSV file(s), the probe and gallery
cameras, the normalization scheme and the single-shot flag.
"""
from __future__ import annotations

import csv
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np


@dataclass(frozen=True, eq=False)
class SampleSet:
    ids: List[str]
    cams: List[str]
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2:
            raise ValueError(f"features must be an n x m matrix, got shape {f.shape}")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "ids", [str(i) for i in self.ids])
        object.__setattr__(self, "cams", [str(c) for c in self.cams])
        if not (len(self.ids) == len(self.cams) == f.shape[0]):
            raise ValueError("ids, cams and feature rows must have equal lengths")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "SampleSet":
        rows = np.asarray(rows, dtype=int)
        return SampleSet([self.ids[r] for r in rows], [self.cams[r] for r in rows],
                         self.features[rows])

    def with_features(self, features) -> "SampleSet":
        return SampleSet(list(self.ids), list(self.cams), features)

    def __eq__(self, other):
        return (isinstance(other, SampleSet) and self.ids == other.ids and self.cams == other.cams
                and np.array_equal(self.features, other.features))


@dataclass(frozen=True, eq=False)
class CrossViewDataset:
    """Probe view (camera A) and gallery view (camera B).

    Every gallery id is either paired with a probe id or listed in
    ``distractor_ids``; distractors never appear in the probe view.
    """

    view_a: SampleSet
    view_b: SampleSet
    distractor_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "distractor_ids", [str(d) for d in self.distractor_ids])
        a_ids = set(self.view_a.ids)
        dis = set(self.distractor_ids)
        if dis & a_ids:
            raise ValueError(f"distractor ids appear in the probe view: {sorted(dis & a_ids)[:5]}")
        unpaired = set(self.view_b.ids) - a_ids - dis
        if unpaired:
            raise ValueError(f"gallery ids without a probe counterpart: {sorted(unpaired)[:5]}")
        if self.view_a.dim != self.view_b.dim:
            raise ValueError("probe and gallery views have different feature dimensions")

    @property
    def paired_ids(self) -> List[str]:
        """Identities present in both views, in order of first appearance in view_a."""
        b = set(self.view_b.ids)
        return list(dict.fromkeys(i for i in self.view_a.ids if i in b))


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 100
    m_dim: int = 20
    transition: str = "tanh_nonlinear"
    noise_sigma: float = 0.3
    n_distractors: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_identities < 2:
            raise ValueError("n_identities must be at least 2")
        if self.m_dim < 1:
            raise ValueError("m_dim must be positive")
        if self.transition not in ("identity", "linear", "tanh_nonlinear"):
            raise ValueError(f"unknown transition {self.transition!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.n_distractors < 0:
            raise ValueError("n_distractors must be nonnegative")


# --------------------------------------------------------------------- CSV


class FeatureFormatError(ValueError):
    pass


def save_csv(samples: SampleSet, path) -> None:
    m = samples.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "cam"] + [f"f{k}" for k in range(m)])
        for i, c, row in zip(samples.ids, samples.cams, samples.features):
            w.writerow([i, c] + [repr(float(v)) for v in row])


def load_csv(path, single_shot: bool = False) -> SampleSet:
    """Parse a feature CSV.  With ``single_shot=True`` a repeated
    (id, cam) pair is an error."""
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_csv(fh, str(path), single_shot)


def _parse_csv(fh, name, single_shot):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise FeatureFormatError(f"{name}: empty file") from None
    if len(header) < 3 or header[0] != "id" or header[1] != "cam":
        raise FeatureFormatError(f"{name}:1: header must be 'id,cam,f0,...'")
    m = len(header) - 2
    ids, cams, rows = [], [], []
    seen = set()
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != m + 2:
            raise FeatureFormatError(f"{name}:{lineno}: expected {m + 2} fields, got {len(rec)}")
        try:
            vals = [float(v) for v in rec[2:]]
        except ValueError:
            raise FeatureFormatError(f"{name}:{lineno}: non-numeric feature value") from None
        key = (rec[0], rec[1])
        if single_shot and key in seen:
            raise FeatureFormatError(f"{name}:{lineno}: duplicate (id, cam) {key} in single-shot mode")
        seen.add(key)
        ids.append(rec[0])
        cams.append(rec[1])
        rows.append(vals)
    feats = np.asarray(rows, dtype=float).reshape(len(rows), m)
    if not np.all(np.isfinite(feats)):
        raise FeatureFormatError(f"{name}: non-finite feature values")
    return SampleSet(ids, cams, feats)


# ------------------------------------------------------------------ binary

BINARY_MAGIC = b"KXCRCF64"


def save_binary(features, path) -> None:
    """Little-endian float64 matrix: magic, uint64 rows, uint64 cols, data row-major."""
    F = np.ascontiguousarray(features, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<QQ", *F.shape))
        fh.write(F.tobytes(order="C"))


def load_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != BINARY_MAGIC:
            raise FeatureFormatError(f"{path}: bad magic header")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise FeatureFormatError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols).astype(float)


# ----------------------------------------------------------------- pairing


def pair_views(samples: SampleSet, cam_a, cam_b, single_shot: bool = True) -> CrossViewDataset:
    """Split a sample set into probe (`cam_a`) and gallery (`cam_b`) views.

    Shared identities are aligned in sorted id order; identities seen only
    in `cam_b` become distractors (appended after the paired ones) and ids
    seen only in `cam_a` are dropped.  In multi-shot mode all rows of an
    identity are kept, grouped by id.
    """
    cam_a, cam_b = str(cam_a), str(cam_b)
    rows_a: dict = {}
    rows_b: dict = {}
    for r, (i, c) in enumerate(zip(samples.ids, samples.cams)):
        if c == cam_a:
            rows_a.setdefault(i, []).append(r)
        elif c == cam_b:
            rows_b.setdefault(i, []).append(r)
    if not rows_a or not rows_b:
        raise ValueError(f"cameras {cam_a!r} and {cam_b!r} must both be present")
    if single_shot:
        for cam, rows in ((cam_a, rows_a), (cam_b, rows_b)):
            multi = [i for i, rs in rows.items() if len(rs) > 1]
            if multi:
                raise ValueError(f"identity {multi[0]!r} has {len(rows[multi[0]])} rows in camera "
                                 f"{cam!r} (single-shot mode)")
    shared = sorted(set(rows_a) & set(rows_b))
    distractors = sorted(set(rows_b) - set(rows_a))

    def gather(rows, ids):
        return [r for i in ids for r in sorted(rows[i])]

    # row order within an identity follows the input order, which matters only in multi-shot mode
    view_a = samples.subset(gather(rows_a, shared))
    view_b = samples.subset(gather(rows_b, shared + distractors))
    return CrossViewDataset(view_a, view_b, distractors)


# ---------------------------------------------------------- normalization


def normalize(samples: SampleSet, scheme: str = "none", return_flags: bool = False):
    """Row-wise normalization: ``none``, ``unit_l2`` or ``unit_l1_nonneg``.

    Zero rows are left as they are and reported (a warning, and a boolean
    mask when ``return_flags=True``).
    """
    F = samples.features
    if scheme == "none":
        out, zero = F.copy(), np.zeros(len(samples), dtype=bool)
    elif scheme == "unit_l2":
        norms = np.linalg.norm(F, axis=1)
        zero = norms == 0
        out = F / np.where(zero, 1.0, norms)[:, None]
    elif scheme == "unit_l1_nonneg":
        if np.any(F < 0):
            raise ValueError("unit_l1_nonneg normalization requires nonnegative features")
        sums = F.sum(axis=1)
        zero = sums == 0
        out = F / np.where(zero, 1.0, sums)[:, None]
    else:
        raise ValueError(f"unknown normalization scheme {scheme!r}")
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero row(s) left unnormalized", RuntimeWarning, stacklevel=2)
    result = samples.with_features(out)
    return (result, zero) if return_flags else result


def normalize_dataset(ds: CrossViewDataset, scheme: str) -> CrossViewDataset:
    if scheme == "none":
        return ds
    return CrossViewDataset(normalize(ds.view_a, scheme), normalize(ds.view_b, scheme),
                            list(ds.distractor_ids))


# ---------------------------------------------------------------- synthetic

# pre-activation scale of the tanh transition; at 1 the map is nearly linear
# over the latent range and every kernel matcher saturates near 100% rank-1
TANH_GAIN = 3.0


def transition_params(config: SynthConfig):
    """Camera-transition parameters (A, b) drawn from ``config.seed``.

    They are the first draws of the generator used by
    :func:`synth_generate`, so a dataset's transition can be rebuilt from
    its config alone.  For ``identity`` A is I and b is 0.
    """
    rng = np.random.default_rng(config.seed)
    return _draw_transition(rng, config)


def _draw_transition(rng, config):
    m = config.m_dim
    # drawn for every transition kind so later draws do not depend on it
    Qm, _ = np.linalg.qr(rng.standard_normal((m, m)))
    scales = rng.uniform(0.5, 1.5, size=m)
    b = rng.normal(0.0, 0.5, size=m)
    if config.transition == "identity":
        return np.eye(m), np.zeros(m)
    A = Qm * scales[None, :]
    if config.transition == "linear":
        return A, np.zeros(m)
    return TANH_GAIN * A, TANH_GAIN * b


def apply_transition(config: SynthConfig, A, b, latent) -> np.ndarray:
    z = latent @ A.T + b
    if config.transition == "tanh_nonlinear":
        return np.tanh(z)
    return z


def synth_generate(config: SynthConfig) -> CrossViewDataset:
    """Synthetic single-shot cross-view dataset.

    Probe features are standard normal; gallery features are
    ``T(probe) + noise_sigma * N(0, 1)`` with T the configured camera
    transition.  Distractors are latent draws pushed through the same
    transition (gallery only).  Ids are ``p0000``... and ``d0000``...;
    cameras are ``a`` (probe) and ``b`` (gallery).
    """
    rng = np.random.default_rng(config.seed)
    A, b = _draw_transition(rng, config)
    n, m = config.n_identities, config.m_dim
    latent = rng.standard_normal((n, m))
    noise = rng.standard_normal((n, m))
    dis_latent = rng.standard_normal((config.n_distractors, m))
    dis_noise = rng.standard_normal((config.n_distractors, m))

    gallery = apply_transition(config, A, b, latent) + config.noise_sigma * noise
    dis = apply_transition(config, A, b, dis_latent) + config.noise_sigma * dis_noise

    ids = [f"p{i:04d}" for i in range(n)]
    dis_ids = [f"d{i:04d}" for i in range(config.n_distractors)]
    view_a = SampleSet(ids, ["a"] * n, latent)
    view_b = SampleSet(ids + dis_ids, ["b"] * (n + len(dis_ids)), np.vstack([gallery, dis]))
    return CrossViewDataset(view_a, view_b, dis_ids)


# ----------------------------------------------------------------- manifest


def write_dataset(ds: CrossViewDataset, directory, normalization: str = "none",
                  single_shot: bool = True, extra: dict | None = None) -> Path:
    """Write one CSV per camera plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cam_a = ds.view_a.cams[0] if len(ds.view_a) else "a"
    cam_b = ds.view_b.cams[0] if len(ds.view_b) else "b"
    save_csv(ds.view_a, directory / f"view_{cam_a}.csv")
    save_csv(ds.view_b, directory / f"view_{cam_b}.csv")
    manifest = {
        "cameras": {cam_a: f"view_{cam_a}.csv", cam_b: f"view_{cam_b}.csv"},
        "probe_cam": cam_a,
        "gallery_cam": cam_b,
        "normalization": normalization,
        "single_shot": single_shot,
        "distractor_ids": list(ds.distractor_ids),
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(path) -> CrossViewDataset:
    """Load a dataset described by a manifest JSON (paths relative to it)."""
    path = Path(path)
    man = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    single_shot = bool(man.get("single_shot", True))
    parts = []
    seen = set()
    for rel in man["cameras"].values():
        if rel in seen:
            continue
        seen.add(rel)
        parts.append(load_csv(base / rel, single_shot=single_shot))
    merged = SampleSet(sum((p.ids for p in parts), []), sum((p.cams for p in parts), []),
                       np.vstack([p.features for p in parts]))
    ds = pair_views(merged, man["probe_cam"], man["gallery_cam"], single_shot=single_shot)
    return normalize_dataset(ds, man.get("normalization", "none"))
