"""Dense embedding tables, score functions and the ``CEMB1`` snapshot format.

Snapshot layout (little endian)::

    b"CEMB1"
    u32 config length, config text (UTF-8 ``key=value`` lines)
    u32 table count
    per table: u32 name length, name, u64 rows, u32 dim, rows*dim float32
    u64 config hash (blake2b-64 of the config text)
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CEMB1"

# snapshot table name -> attribute
TABLES = {
    "items_in": "item_in",
    "items_out": "item_out",
    "users": "user",
    "items_users": "item_user",
    "words": "word",
    "user_feats": "user_feat",
}


class SnapshotError(ValueError):
    pass


def config_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class EmbeddingStore:
    """Item-in/item-out, user, optional item-user, word and user-feature tables.

    In tied mode (``item_user is None``) the user preference score reuses the
    item-out table, so user-side dimension equals the item dimension.
    """

    item_in: np.ndarray
    item_out: np.ndarray
    user: np.ndarray
    word: np.ndarray
    user_feat: np.ndarray
    item_user: np.ndarray | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.item_in.shape != self.item_out.shape:
            raise ValueError("item_in and item_out must have the same shape")
        if self.item_user is None and self.user.shape[1] != self.dim:
            raise ValueError("tied mode requires user dim == item dim")
        if self.item_user is not None and self.item_user.shape != (self.n_items, self.user_dim):
            raise ValueError("item_user must be n_items x user_dim")

    @classmethod
    def init(cls, n_items: int, n_users: int, n_words: int, n_user_feats: int,
             dim: int, user_dim: int | None = None, tied: bool = True, seed: int = 0,
             dtype=np.float32) -> "EmbeddingStore":
        """Uniform(-0.5/dim, 0.5/dim) initialisation from a seeded generator."""
        user_dim = dim if user_dim is None else user_dim
        if dim < 1 or user_dim < 1:
            raise ValueError("embedding dimensions must be >= 1")
        if n_items < 1 or n_users < 1:
            raise ValueError("item and user vocabularies must be non-empty")
        if tied and user_dim != dim:
            raise ValueError("tied item-user table requires user_dim == dim")
        rng = np.random.default_rng(seed)

        def table(rows, d):
            return rng.uniform(-0.5 / d, 0.5 / d, size=(rows, d)).astype(dtype)

        item_in = table(n_items, dim)
        item_out = table(n_items, dim)
        user = table(n_users, user_dim)
        word = table(n_words, dim)
        user_feat = table(n_user_feats, user_dim)
        item_user = None if tied else table(n_items, user_dim)
        return cls(item_in, item_out, user, word, user_feat, item_user)

    @property
    def dim(self) -> int:
        return self.item_in.shape[1]

    @property
    def user_dim(self) -> int:
        return self.user.shape[1]

    @property
    def n_items(self) -> int:
        return self.item_in.shape[0]

    @property
    def tied(self) -> bool:
        return self.item_user is None

    @property
    def user_side_items(self) -> np.ndarray:
        """Rows paired with user vectors in the preference score."""
        return self.item_out if self.item_user is None else self.item_user

    def tables(self) -> dict[str, np.ndarray]:
        out = {}
        for name, attr in TABLES.items():
            arr = getattr(self, attr)
            if arr is not None:
                out[name] = arr
        return out

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.item_in.copy(), self.item_out.copy(), self.user.copy(),
                              self.word.copy(), self.user_feat.copy(),
                              None if self.item_user is None else self.item_user.copy(),
                              dict(self.meta))

    def astype(self, dtype) -> "EmbeddingStore":
        s = self.copy()
        for attr in TABLES.values():
            arr = getattr(s, attr)
            if arr is not None:
                setattr(s, attr, arr.astype(dtype))
        return s

    def equals(self, other: "EmbeddingStore") -> bool:
        a, b = self.tables(), other.tables()
        return a.keys() == b.keys() and all(
            a[k].dtype == b[k].dtype and a[k].shape == b[k].shape
            and a[k].tobytes() == b[k].tobytes() for k in a)

    # score functions; float64 accumulation
    def score_pair(self, j: int, i: int) -> float:
        """Complementariness of ``j`` (out side) given ``i`` (in side)."""
        return float(np.dot(self.item_out[j].astype(np.float64), self.item_in[i].astype(np.float64)))

    def pooled(self, ctx) -> np.ndarray:
        ctx = list(ctx)
        if not ctx:
            raise ValueError("empty context")
        acc = np.zeros(self.dim, dtype=np.float64)
        for i in ctx:
            acc += self.item_in[i]
        return acc / len(ctx)

    def score_seq(self, j: int, ctx) -> float:
        return float(np.dot(self.item_out[j].astype(np.float64), self.pooled(ctx)))

    def score_user(self, j: int, u: int) -> float:
        return float(np.dot(self.user_side_items[j].astype(np.float64), self.user[u].astype(np.float64)))

    def score_token(self, w: int, i: int) -> float:
        return float(np.dot(self.word[w].astype(np.float64), self.item_in[i].astype(np.float64)))

    def score_ufeat(self, x: int, u: int) -> float:
        return float(np.dot(self.user_feat[x].astype(np.float64), self.user[u].astype(np.float64)))

    # persistence
    def config_text(self) -> str:
        lines = [f"dim={self.dim}", f"user_dim={self.user_dim}",
                 f"item_user_table={'tied' if self.tied else 'separate'}"]
        for name, arr in self.tables().items():
            lines.append(f"table.{name}={arr.shape[0]}x{arr.shape[1]}")
        for k in sorted(self.meta):
            lines.append(f"meta.{k}={self.meta[k]}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> int:
        return config_hash(self.config_text())

    def save(self, path: str | Path) -> None:
        save(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        return load(path)


def _write_tables(f, config_text: str, tables: dict[str, np.ndarray]) -> None:
    cfg = config_text.encode("utf-8")
    f.write(MAGIC)
    f.write(struct.pack("<I", len(cfg)))
    f.write(cfg)
    f.write(struct.pack("<I", len(tables)))
    for name, arr in tables.items():
        nb = name.encode("utf-8")
        f.write(struct.pack("<I", len(nb)))
        f.write(nb)
        f.write(struct.pack("<QI", arr.shape[0], arr.shape[1]))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    f.write(struct.pack("<Q", config_hash(config_text)))


def _read_tables(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise SnapshotError(f"{path}: truncated snapshot")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise SnapshotError(f"{path}: bad magic, not a CEMB1 snapshot")
    (clen,) = struct.unpack("<I", take(4))
    try:
        text = take(clen).decode("utf-8")
    except UnicodeDecodeError:
        raise SnapshotError(f"{path}: corrupted config header") from None
    (ntab,) = struct.unpack("<I", take(4))
    tables = {}
    for _ in range(ntab):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8", errors="replace")
        rows, dim = struct.unpack("<QI", take(12))
        raw = take(rows * dim * 4)
        tables[name] = np.frombuffer(raw, dtype="<f4").reshape(rows, dim).astype(np.float32)
    (stored,) = struct.unpack("<Q", take(8))
    if pos != len(data):
        raise SnapshotError(f"{path}: trailing bytes after footer")
    if stored != config_hash(text):
        raise SnapshotError(f"{path}: config hash mismatch (header corrupted or edited)")
    # header must describe the tables actually present
    declared = {}
    for line in text.splitlines():
        k, _, v = line.partition("=")
        if k.startswith("table."):
            declared[k[6:]] = v
    actual = {n: f"{a.shape[0]}x{a.shape[1]}" for n, a in tables.items()}
    if declared != actual:
        raise SnapshotError(f"{path}: table layout {actual} disagrees with header {declared}")
    return text, tables


def save(store: EmbeddingStore, path: str | Path) -> None:
    """Write ``store`` as float32; float64 stores are narrowed."""
    with open(path, "wb") as f:
        _write_tables(f, store.config_text(), store.tables())


def load(path: str | Path) -> EmbeddingStore:
    text, tables = _read_tables(path)
    meta = {}
    for line in text.splitlines():
        k, _, v = line.partition("=")
        if k.startswith("meta."):
            meta[k[5:]] = v
    try:
        kw = {attr: tables[name] for name, attr in TABLES.items() if name in tables}
        return EmbeddingStore(meta=meta, **kw)
    except (KeyError, TypeError, ValueError) as e:
        raise SnapshotError(f"{path}: incomplete snapshot ({e})") from None


def save_fragment(path: str | Path, item_ids: list[str], vectors: np.ndarray) -> None:
    """Item-in rows for items outside the trained vocabulary (cold start)."""
    vectors = np.asarray(vectors, dtype=np.float32).reshape(len(item_ids), -1)
    text = "kind=fragment\n" + "".join(f"item={i}\n" for i in item_ids) + \
        f"table.items_in={vectors.shape[0]}x{vectors.shape[1]}\n"
    with open(path, "wb") as f:
        _write_tables(f, text, {"items_in": vectors})


def load_fragment(path: str | Path) -> tuple[list[str], np.ndarray]:
    text, tables = _read_tables(path)
    ids = [line[5:] for line in text.splitlines() if line.startswith("item=")]
    return ids, tables["items_in"]


def export_text(store: EmbeddingStore, path: str | Path, names: dict[str, list[str]] | None = None) -> None:
    """Plain-text dump: one ``table<TAB>row<TAB>v1 v2 ...`` line per row, 9 significant digits."""
    names = names or {}
    with open(path, "w", encoding="utf-8") as f:
        for name, arr in store.tables().items():
            keys = names.get(name)
            for r, row in enumerate(arr):
                key = keys[r] if keys else str(r)
                f.write(f"{name}\t{key}\t" + " ".join(f"{v:.9g}" for v in row) + "\n")
