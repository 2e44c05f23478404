"""Interaction and feature ingestion, 8:1:1 splitting, BPR sampling, synthetic data."""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")
FEATURE_MAGIC = b"SEAF"
MODALITIES = ("visual", "textual")


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass
class InteractionDataset:
    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    split: np.ndarray
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    n_duplicates: int = 0

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int8)
        if not self.user_ids:
            self.user_ids = [f"u{k}" for k in range(self.n_users)]
        if not self.item_ids:
            self.item_ids = [f"i{k}" for k in range(self.n_items)]

    def __len__(self):
        return len(self.users)

    def validate(self) -> None:
        if len(self.users) != len(self.items) or len(self.users) != len(self.split):
            raise ValueError("users, items and split must have equal length")
        if len(self.users) and (self.users.min() < 0 or self.users.max() >= self.n_users):
            raise ValueError("user index out of range")
        if len(self.items) and (self.items.min() < 0 or self.items.max() >= self.n_items):
            raise ValueError("item index out of range")
        keys = self.users * self.n_items + self.items
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate (user, item) pairs")

    def pairs(self, which: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.split == which
        return self.users[sel], self.items[sel]

    def user_items(self, which: int | tuple[int, ...]) -> list[set[int]]:
        """Per-user item sets for one split or a union of splits."""
        which = (which,) if isinstance(which, int) else which
        out: list[set[int]] = [set() for _ in range(self.n_users)]
        sel = np.isin(self.split, which)
        for u, i in zip(self.users[sel].tolist(), self.items[sel].tolist()):
            out[u].add(i)
        return out

    def item_index(self, item_id: str) -> int:
        return self.item_ids.index(item_id)

    def user_index(self, user_id: str) -> int:
        return self.user_ids.index(user_id)


@dataclass
class FeatureMatrix:
    modality: str
    data: np.ndarray

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("feature data must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise ValueError(f"{self.modality} features contain NaN/Inf")

    @property
    def n_items(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


# --------------------------------------------------------------------------- io


def load_interactions(path: str | Path) -> InteractionDataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    if header != ["user_id", "item_id"]:
        raise ParseError(f"expected header 'user_id,item_id', got {','.join(rows[0])!r}", line=1)
    if len(rows) == 1:
        raise ParseError(f"{path} has no interactions")

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    users, items = [], []
    dups = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 or not row[0].strip() or not row[1].strip():
            raise ParseError(f"expected 2 non-empty fields, got {row!r}", line=lineno)
        u = user_map.setdefault(row[0].strip(), len(user_map))
        i = item_map.setdefault(row[1].strip(), len(item_map))
        if (u, i) in seen:
            dups += 1
            continue
        seen.add((u, i))
        users.append(u)
        items.append(i)
    if dups:
        log.warning("%s: dropped %d duplicate interactions", path, dups)
    return InteractionDataset(
        n_users=len(user_map),
        n_items=len(item_map),
        users=np.array(users),
        items=np.array(items),
        split=np.zeros(len(users), dtype=np.int8),
        user_ids=list(user_map),
        item_ids=list(item_map),
        n_duplicates=dups,
    )


def save_interactions(ds: InteractionDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id"])
        for u, i in zip(ds.users.tolist(), ds.items.tolist()):
            w.writerow([ds.user_ids[u], ds.item_ids[i]])


def save_split(ds: InteractionDataset, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_index", "item_index", "split"])
        for u, i, s in zip(ds.users.tolist(), ds.items.tolist(), ds.split.tolist()):
            w.writerow([u, i, SPLIT_NAMES[s]])


def load_split(path: str | Path, template: InteractionDataset) -> InteractionDataset:
    """Read a split file and attach it to ``template``'s id mapping."""
    users, items, split = [], [], []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_index", "item_index", "split"]:
            raise ParseError("bad split header", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                u, i, s = int(row[0]), int(row[1]), SPLIT_NAMES.index(row[2])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"bad split row {row!r}", line=lineno) from exc
            users.append(u)
            items.append(i)
            split.append(s)
    ds = InteractionDataset(
        n_users=template.n_users,
        n_items=template.n_items,
        users=np.array(users),
        items=np.array(items),
        split=np.array(split),
        user_ids=list(template.user_ids),
        item_ids=list(template.item_ids),
    )
    ds.validate()
    return ds


def save_id_map(ds: InteractionDataset, path: str | Path) -> None:
    """Two-column CSV per entity: ``kind,index,id`` keeps users and items in one file."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "index", "id"])
        for k, uid in enumerate(ds.user_ids):
            w.writerow(["user", k, uid])
        for k, iid in enumerate(ds.item_ids):
            w.writerow(["item", k, iid])


def write_matrix(path: str | Path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    rows, cols = data.shape
    with Path(path).open("wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(data.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    """Read a ``SEAF`` binary matrix, falling back to headerless CSV."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == FEATURE_MAGIC:
        if len(raw) < 12:
            raise ParseError(f"{path}: truncated SEAF header")
        rows, cols = struct.unpack("<II", raw[4:12])
        body = raw[12:]
        if len(body) != rows * cols * 4:
            raise ParseError(f"{path}: expected {rows * cols * 4} payload bytes, found {len(body)}")
        return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)
    try:
        data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{path}: neither SEAF binary nor numeric CSV ({exc})") from exc
    if data.size == 0:
        raise ParseError(f"{path}: empty feature file")
    return data


def load_features(path: str | Path, modality: str, n_items: int | None = None) -> FeatureMatrix:
    fm = FeatureMatrix(modality, read_matrix(path))
    if n_items is not None and fm.n_items != n_items:
        raise ValueError(f"{modality} features have {fm.n_items} rows, dataset has {n_items} items")
    return fm


def align_items(ds: InteractionDataset, n_rows: int) -> InteractionDataset:
    """Match dataset item indices to feature rows.

    When every item id is an integer below ``n_rows`` the id is the feature
    row (MMRec convention) and items with features but no interactions are
    kept. Otherwise feature rows must follow first-appearance order.
    """
    try:
        rows = [int(i) for i in ds.item_ids]
    except ValueError:
        rows = None
    if rows is None or min(rows) < 0 or max(rows) >= n_rows:
        if ds.n_items != n_rows:
            raise ValueError(f"features have {n_rows} rows but the dataset has {ds.n_items} items "
                             "and item ids are not row numbers")
        return ds
    remap = np.asarray(rows, dtype=np.int64)
    return InteractionDataset(
        n_users=ds.n_users,
        n_items=n_rows,
        users=ds.users.copy(),
        items=remap[ds.items],
        split=ds.split.copy(),
        user_ids=list(ds.user_ids),
        item_ids=[str(k) for k in range(n_rows)],
        n_duplicates=ds.n_duplicates,
    )


# ------------------------------------------------------------------- splitting


def split_dataset(ds: InteractionDataset, seed: int) -> InteractionDataset:
    """Per-user random 8:1:1 split; val and test each get floor(n/10)."""
    rng = np.random.default_rng(seed)
    split = np.full(len(ds), TRAIN, dtype=np.int8)
    order = np.argsort(ds.users, kind="stable")
    bounds = np.searchsorted(ds.users[order], np.arange(ds.n_users + 1))
    degenerate = 0
    for u in range(ds.n_users):
        idx = order[bounds[u]:bounds[u + 1]]
        n = len(idx)
        if n == 0:
            continue
        if n < 3:
            degenerate += 1
            continue
        perm = idx[rng.permutation(n)]
        n_hold = n // 10
        split[perm[:n_hold]] = VAL
        split[perm[n_hold:2 * n_hold]] = TEST
    if degenerate:
        log.warning("%d users with < 3 interactions kept entirely in train", degenerate)
    return InteractionDataset(
        n_users=ds.n_users,
        n_items=ds.n_items,
        users=ds.users.copy(),
        items=ds.items.copy(),
        split=split,
        user_ids=list(ds.user_ids),
        item_ids=list(ds.item_ids),
        n_duplicates=ds.n_duplicates,
    )


# --------------------------------------------------------------------- sampling


class TripletSampler:
    """Uniform BPR triplets from the train split.

    Positives are uniform over train interactions; negatives uniform over the
    items a user has not trained on, by rejection with a cap of ``max_tries``.
    """

    def __init__(self, ds: InteractionDataset, max_tries: int = 100):
        self.users, self.items = ds.pairs(TRAIN)
        if len(self.users) == 0:
            raise ValueError("train split is empty")
        self.n_items = ds.n_items
        self.max_tries = max_tries
        self._keys = np.unique(self.users * self.n_items + self.items)
        self.n_skipped = 0
        counts = np.bincount(self.users)
        if np.all(counts[np.unique(self.users)] >= self.n_items):
            raise ValueError("every train user has interacted with every item")

    def _known(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users * self.n_items + items
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        return self._keys[pos] == keys

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((0, 3), dtype=np.int64)
        while len(out) < batch_size:
            need = batch_size - len(out)
            pick = rng.integers(0, len(self.users), size=need)
            u, i = self.users[pick], self.items[pick]
            j = rng.integers(0, self.n_items, size=need)
            bad = self._known(u, j)
            tries = 1
            while bad.any() and tries < self.max_tries:
                j[bad] = rng.integers(0, self.n_items, size=int(bad.sum()))
                bad = self._known(u, j)
                tries += 1
            if bad.any():
                self.n_skipped += int(bad.sum())
                log.warning("skipped %d draws: no negative found in %d tries", int(bad.sum()), self.max_tries)
            keep = ~bad
            out = np.concatenate([out, np.stack([u[keep], i[keep], j[keep]], axis=1)])
        return out


def sample_bpr_triplets(ds: InteractionDataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """``batch_size`` rows of ``(user, positive, negative)``."""
    return TripletSampler(ds).sample(batch_size, rng)


# -------------------------------------------------------------------- synthetic


def generate_synthetic(
    n_users: int,
    n_items: int,
    latent_dim: int,
    noise: float,
    seed: int,
    *,
    private_dim: int | None = None,
    visual_dim: int = 32,
    textual_dim: int = 24,
    density: float = 0.2,
) -> tuple[InteractionDataset, FeatureMatrix, FeatureMatrix]:
    """Latent-factor dataset whose two modalities share ``latent_dim`` factors.

    Each item also carries a visual-only and a textual-only latent block of
    ``private_dim`` factors. Users rate against all three blocks, so every
    modality holds some signal the other lacks. A user interacts with the top
    ``density`` fraction of items by score (at least 3).
    """
    if latent_dim < 2:
        raise ValueError("latent_dim must be >= 2")
    private_dim = max(1, latent_dim // 2) if private_dim is None else private_dim
    if visual_dim < latent_dim + private_dim or textual_dim < latent_dim + private_dim:
        raise ValueError("feature dims must cover shared + private latent blocks")
    rng = np.random.default_rng(seed)

    z_items = rng.standard_normal((n_items, latent_dim))
    p_vis = rng.standard_normal((n_items, private_dim))
    p_txt = rng.standard_normal((n_items, private_dim))
    z_users = rng.standard_normal((n_users, latent_dim + 2 * private_dim))
    z_users[:, latent_dim:] *= 0.5

    scores = z_users @ np.concatenate([z_items, p_vis, p_txt], axis=1).T
    per_user = max(3, int(round(density * n_items)))
    per_user = min(per_user, n_items)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :per_user]
    users = np.repeat(np.arange(n_users), per_user)
    items = top.reshape(-1)

    map_v = rng.standard_normal((latent_dim + private_dim, visual_dim)) / np.sqrt(latent_dim + private_dim)
    map_t = rng.standard_normal((latent_dim + private_dim, textual_dim)) / np.sqrt(latent_dim + private_dim)
    vis = np.concatenate([z_items, p_vis], axis=1) @ map_v
    txt = np.concatenate([z_items, p_txt], axis=1) @ map_t
    vis += noise * rng.standard_normal(vis.shape)
    txt += noise * rng.standard_normal(txt.shape)

    ds = InteractionDataset(
        n_users=n_users,
        n_items=n_items,
        users=users,
        items=items,
        split=np.zeros(len(users), dtype=np.int8),
        user_ids=[str(k) for k in range(n_users)],
        item_ids=[str(k) for k in range(n_items)],
    )
    return ds, FeatureMatrix("visual", vis), FeatureMatrix("textual", txt)
