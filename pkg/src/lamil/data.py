"""Bags, the LAMB file format, synthetic data, and fold assignment.

A bag is one slide's worth of instances: tile coordinates (tile-grid
units), tile feature vectors, per-target labels (0, 1, or 255 = missing),
and a patient identifier.  Files store coordinates and features as 32-bit
floats; they are promoted to 64-bit on load so all compute runs in f64.

The synthetic generator plants a recoverable motif: every bag is a random
connected mask of jittered grid tiles with standard-normal features, and
each positive target adds +effect to feature t on all tiles within a radius
of a random center tile.  Every draw comes from seed-split portable streams
(mask geometry / labels / features, split again per bag), so a dataset is a
pure function of its seed.

Fold assignment is by patient, greedy-stratified so per-target positive
counts stay balanced across folds.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .fileio import ByteReader, FormatError, encode_string
from .loss import MISSING
from .rng import derive_stream

_LAMB_MAGIC = b"LAMB"
_LAMB_VERSION = 1


@dataclass(eq=False)
class Bag:
    """One bag of spatially-located instances."""

    bag_id: str
    patient_id: str
    coords: np.ndarray  # (n, 2) float64
    features: np.ndarray  # (n, D) float64
    labels: np.ndarray  # (T,) uint8 in {0, 1, 255}

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError(f"coords must be n x 2, got {self.coords.shape}")
        if self.features.ndim != 2:
            raise ValueError(f"features must be n x D, got {self.features.shape}")
        if self.coords.shape[0] != self.features.shape[0]:
            raise ValueError(
                f"coords rows {self.coords.shape[0]} != feature rows "
                f"{self.features.shape[0]}"
            )
        if self.coords.shape[0] < 1:
            raise ValueError("a bag needs at least one tile")
        ok = (self.labels == 0) | (self.labels == 1) | (self.labels == MISSING)
        if not ok.all():
            t = int(np.flatnonzero(~ok)[0])
            raise ValueError(
                f"label {t} is {int(self.labels[t])}, expected 0, 1, or {MISSING}"
            )

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(eq=False)
class Dataset:
    """Bags plus target names and an optional fold assignment."""

    bags: list[Bag]
    target_names: list[str]
    folds: np.ndarray | None = None

    def __post_init__(self):
        t = len(self.target_names)
        for bag in self.bags:
            if bag.labels.shape[0] != t:
                raise ValueError(
                    f"bag {bag.bag_id} has {bag.labels.shape[0]} labels, "
                    f"dataset has {t} targets"
                )
        if self.bags:
            d = self.bags[0].features.shape[1]
            for bag in self.bags:
                if bag.features.shape[1] != d:
                    raise ValueError(
                        f"bag {bag.bag_id} has {bag.features.shape[1]} feature "
                        f"dims, expected {d}"
                    )

    def label_table(self) -> np.ndarray:
        return np.stack([bag.labels for bag in self.bags])


def save_bag(path: str, bag: Bag) -> None:
    """Write one LAMB file; load_bag inverts it bit-exactly."""
    n, d = bag.features.shape
    t = bag.labels.shape[0]
    parts = [
        _LAMB_MAGIC,
        struct.pack("<H", _LAMB_VERSION),
        struct.pack("<III", n, d, t),
        encode_string(bag.bag_id),
        encode_string(bag.patient_id),
        np.ascontiguousarray(bag.coords, dtype="<f4").tobytes(),
        np.ascontiguousarray(bag.features, dtype="<f4").tobytes(),
        bag.labels.tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_bag(path: str) -> Bag:
    """Read one LAMB file; malformed input is rejected with a byte offset."""
    with open(path, "rb") as fh:
        reader = ByteReader(fh.read())
    magic = reader.take(4, "magic")
    if magic != _LAMB_MAGIC:
        raise FormatError(0, f"bad magic {magic!r}, expected {_LAMB_MAGIC!r}")
    version = reader.u16("version")
    if version != _LAMB_VERSION:
        raise FormatError(4, f"unsupported version {version}")
    n = reader.u32("tile count")
    d = reader.u32("feature dim")
    t = reader.u32("target count")
    bag_id = reader.string("bag_id")
    patient_id = reader.string("patient_id")
    coords = reader.array("<f4", n * 2, "coords").astype(np.float64).reshape(n, 2)
    features = reader.array("<f4", n * d, "features").astype(np.float64).reshape(n, d)
    labels_at = reader.offset
    labels = reader.array("u1", t, "labels")
    reader.expect_end()
    ok = (labels == 0) | (labels == 1) | (labels == MISSING)
    if not ok.all():
        j = int(np.flatnonzero(~ok)[0])
        raise FormatError(
            labels_at + j, f"label byte {int(labels[j])} not in {{0, 1, {MISSING}}}"
        )
    return Bag(bag_id, patient_id, coords, features, labels)


def _grow_mask(stream, n: int) -> list[tuple[int, int]]:
    """Random connected set of n grid cells grown from the origin."""
    cells = [(0, 0)]
    taken = {(0, 0)}
    frontier: list[tuple[int, int]] = []
    in_frontier: set[tuple[int, int]] = set()

    def push_neighbors(cx: int, cy: int) -> None:
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if (nx, ny) not in taken and (nx, ny) not in in_frontier:
                frontier.append((nx, ny))
                in_frontier.add((nx, ny))

    push_neighbors(0, 0)
    while len(cells) < n:
        i = stream.randint(len(frontier))
        frontier[i], frontier[-1] = frontier[-1], frontier[i]
        cell = frontier.pop()
        in_frontier.discard(cell)
        taken.add(cell)
        cells.append(cell)
        push_neighbors(*cell)
    return cells


def synth_dataset(
    bags: int,
    tiles: int | tuple[int, int],
    input_dim: int,
    targets: int,
    radius: float,
    effect: float,
    seed: int,
) -> Dataset:
    """Planted-motif dataset, fully determined by the seed.

    ``tiles`` is a count or an inclusive (lo, hi) range per bag.  Labels
    are independent fair coin flips per target; a positive target t adds
    ``effect`` to feature t on every tile within ``radius`` of a randomly
    chosen center tile.  Requires input_dim >= targets so each target has
    its own feature coordinate.
    """
    if bags < 1 or input_dim < 1 or targets < 1:
        raise ValueError("bags, input_dim, and targets must all be >= 1")
    if input_dim < targets:
        raise ValueError(
            f"input_dim must be >= targets, got D={input_dim} < T={targets}"
        )
    if isinstance(tiles, tuple):
        lo, hi = tiles
    else:
        lo = hi = int(tiles)
    if lo < 1 or hi < lo:
        raise ValueError(f"bad tile range ({lo}, {hi})")

    out: list[Bag] = []
    for b in range(bags):
        mask_stream = derive_stream(seed, "mask", b)
        label_stream = derive_stream(seed, "labels", b)
        feat_stream = derive_stream(seed, "features", b)

        n = lo if lo == hi else lo + mask_stream.randint(hi - lo + 1)
        cells = _grow_mask(mask_stream, n)
        coords = np.empty((n, 2))
        for i, (cx, cy) in enumerate(cells):
            coords[i, 0] = cx + (mask_stream.uniform() * 0.5 - 0.25)
            coords[i, 1] = cy + (mask_stream.uniform() * 0.5 - 0.25)

        labels = np.empty(targets, dtype=np.uint8)
        for t in range(targets):
            labels[t] = 1 if label_stream.uniform() < 0.5 else 0

        features = feat_stream.normals(n * input_dim).reshape(n, input_dim)
        for t in range(targets):
            if labels[t] != 1:
                continue
            center = feat_stream.randint(n)
            delta = coords - coords[center]
            near = (delta[:, 0] ** 2 + delta[:, 1] ** 2) <= radius * radius
            features[near, t] += effect

        out.append(
            Bag(
                bag_id=f"bag{b:04d}",
                patient_id=f"patient{b:04d}",
                coords=coords,
                features=features,
                labels=labels,
            )
        )
    names = [f"t{t}" for t in range(targets)]
    return Dataset(bags=out, target_names=names)


def save_dataset(dataset: Dataset, out_dir: str) -> str:
    """Write every bag as a LAMB file plus a manifest; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = ["targets: " + ",".join(dataset.target_names)]
    for bag in dataset.bags:
        name = f"{bag.bag_id}.lamb"
        save_bag(os.path.join(out_dir, name), bag)
        lines.append(name)
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def load_manifest(path: str) -> Dataset:
    """Load a dataset from a manifest: a targets header, then one bag path
    per line (relative paths resolve against the manifest's directory)."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = [line.strip() for line in fh]
    lines = [line for line in raw if line and not line.startswith("#")]
    if not lines or not lines[0].startswith("targets:"):
        raise ValueError(f"{path}:1: manifest must start with 'targets: name,...'")
    names = [t.strip() for t in lines[0][len("targets:") :].split(",") if t.strip()]
    if not names:
        raise ValueError(f"{path}:1: no target names in manifest header")
    base = os.path.dirname(os.path.abspath(path))
    bags = []
    for line in lines[1:]:
        bag_path = line if os.path.isabs(line) else os.path.join(base, line)
        bags.append(load_bag(bag_path))
    if not bags:
        raise ValueError(f"{path}: manifest lists no bags")
    return Dataset(bags=bags, target_names=names)


def stratified_kfold(dataset: Dataset, folds: int, seed: int) -> np.ndarray:
    """Patient-disjoint stratified fold assignment; returns fold per bag.

    All of a patient's bags land in one fold.  Patients are processed from
    the rarest positive label up, each going to the fold with the largest
    positive deficit for that label; ties prefer the fold with fewer bags,
    then the lower index.  The seed only shuffles order within rarity ties.
    """
    if folds < 2:
        raise ValueError(f"folds must be >= 2, got {folds}")
    patients: dict[str, list[int]] = {}
    for i, bag in enumerate(dataset.bags):
        patients.setdefault(bag.patient_id, []).append(i)
    if len(patients) < folds:
        raise ValueError(f"{len(patients)} patients cannot fill {folds} folds")

    ids = list(patients.keys())
    t_count = len(dataset.target_names)
    # Patient-level positivity: positive if any bag is positive.
    pos = {
        pid: np.array(
            [
                any(dataset.bags[i].labels[t] == 1 for i in patients[pid])
                for t in range(t_count)
            ]
        )
        for pid in ids
    }
    global_pos = np.zeros(t_count, dtype=np.int64)
    for pid in ids:
        global_pos += pos[pid]

    def rarest(pid: str) -> int | None:
        mine = np.flatnonzero(pos[pid])
        if mine.size == 0:
            return None
        return int(mine[np.argmin(global_pos[mine])])

    # Group by rarity key; the seeded shuffle acts only inside a group.
    groups: dict[int, list[str]] = {}
    no_positive: list[str] = []
    for pid in ids:
        t = rarest(pid)
        if t is None:
            no_positive.append(pid)
        else:
            groups.setdefault(int(global_pos[t]), []).append(pid)
    stream = derive_stream(seed, "kfold")
    ordered: list[str] = []
    for key in sorted(groups):
        group = groups[key]
        stream.shuffle(group)
        ordered.extend(group)
    stream.shuffle(no_positive)
    ordered.extend(no_positive)

    fold_pos = np.zeros((folds, t_count), dtype=np.int64)
    fold_bags = np.zeros(folds, dtype=np.int64)
    ideal = global_pos.astype(np.float64) / folds
    assignment = np.empty(len(dataset.bags), dtype=np.int64)
    for pid in ordered:
        t = rarest(pid)
        if t is None:
            f = int(np.lexsort((np.arange(folds), fold_bags))[0])
        else:
            deficit = ideal[t] - fold_pos[:, t]
            best = deficit.max()
            tied = np.flatnonzero(deficit == best)
            tied = tied[fold_bags[tied] == fold_bags[tied].min()]
            f = int(tied[0])
        for i in patients[pid]:
            assignment[i] = f
        fold_pos[f] += pos[pid]
        fold_bags[f] += len(patients[pid])
    return assignment


def load_csv_dataset(tiles_path: str, labels_path: str) -> Dataset:
    """Ingest externally extracted features from two CSV files.

    Tiles CSV header: bag_id, patient_id, x, y, f_0 .. f_{D-1}; one row per
    tile.  Labels CSV header: bag_id, then one column per target; label
    cells are 0, 1, or 255/empty for missing.
    """
    with open(tiles_path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{tiles_path}: empty file")
    header = rows[0]
    if header[:4] != ["bag_id", "patient_id", "x", "y"]:
        raise ValueError(
            f"{tiles_path}:1: header must start with bag_id,patient_id,x,y"
        )
    d = len(header) - 4
    if d < 1:
        raise ValueError(f"{tiles_path}:1: no feature columns")
    order: list[str] = []
    per_bag: dict[str, dict] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4 + d:
            raise ValueError(
                f"{tiles_path}:{lineno}: expected {4 + d} columns, got {len(row)}"
            )
        bag_id, patient_id = row[0], row[1]
        try:
            vals = [float(x) for x in row[2:]]
        except ValueError as exc:
            raise ValueError(f"{tiles_path}:{lineno}: non-numeric cell") from exc
        entry = per_bag.get(bag_id)
        if entry is None:
            per_bag[bag_id] = entry = {"patient": patient_id, "coords": [], "feats": []}
            order.append(bag_id)
        elif entry["patient"] != patient_id:
            raise ValueError(
                f"{tiles_path}:{lineno}: bag {bag_id} listed under two patients"
            )
        entry["coords"].append(vals[:2])
        entry["feats"].append(vals[2:])

    with open(labels_path, "r", encoding="utf-8", newline="") as fh:
        lrows = list(csv.reader(fh))
    if not lrows or lrows[0][:1] != ["bag_id"]:
        raise ValueError(f"{labels_path}:1: header must start with bag_id")
    names = lrows[0][1:]
    if not names:
        raise ValueError(f"{labels_path}:1: no target columns")
    labels: dict[str, np.ndarray] = {}
    for lineno, row in enumerate(lrows[1:], start=2):
        if not row:
            continue
        if len(row) != 1 + len(names):
            raise ValueError(
                f"{labels_path}:{lineno}: expected {1 + len(names)} columns, "
                f"got {len(row)}"
            )
        vec = np.empty(len(names), dtype=np.uint8)
        for t, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell in ("", str(MISSING)):
                vec[t] = MISSING
            elif cell in ("0", "1"):
                vec[t] = int(cell)
            else:
                raise ValueError(
                    f"{labels_path}:{lineno}: label {cell!r} not 0/1/{MISSING}/empty"
                )
        labels[row[0]] = vec

    bags = []
    for bag_id in order:
        if bag_id not in labels:
            raise ValueError(f"{labels_path}: no label row for bag {bag_id}")
        entry = per_bag[bag_id]
        bags.append(
            Bag(
                bag_id=bag_id,
                patient_id=entry["patient"],
                coords=np.array(entry["coords"]),
                features=np.array(entry["feats"]),
                labels=labels[bag_id],
            )
        )
    return Dataset(bags=bags, target_names=names)
