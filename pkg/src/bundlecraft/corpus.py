"""Corpus loading, validation, splitting and partial-bundle views.

Three information sources are served: bundle-item affiliations, user-item
interactions and per-item content features. File formats:

* interactions: UTF-8 text, one ``user_token<TAB>item_token`` per line.
* affiliations: UTF-8 text, one ``bundle_token<TAB>item_token`` per line.
* item index:   UTF-8 text, one ``item_token<TAB>row`` per line, rows
  0..N-1 dense.
* features:     binary, magic ``BFV1``, u32 LE row count, u32 LE dim,
  presence bitmap of ceil(rows/8) bytes (bit r%8 of byte r//8 set = row
  present), then rows*dim float32 LE values row-major. Absent rows occupy
  space but their content is ignored (zeroed on load).

All loaded structures are immutable after load; rng state is owned by the
caller everywhere randomness is involved.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusFormatError, InsufficientDataError, IntegrityError

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"BFV1"


@dataclass(frozen=True)
class Catalog:
    """Interned id tables plus the bundle list (order = affiliations file order)."""

    item_tokens: tuple
    user_tokens: tuple
    bundle_tokens: tuple
    bundles: tuple  # tuple of frozenset[int]
    item_index: dict = field(repr=False)
    user_index: dict = field(repr=False)

    @property
    def n_items(self):
        return len(self.item_tokens)

    @property
    def n_users(self):
        return len(self.user_tokens)

    @property
    def n_bundles(self):
        return len(self.bundles)


@dataclass(frozen=True)
class FeatureTable:
    """Raw per-item content features with explicit presence flags."""

    text: np.ndarray
    text_present: np.ndarray
    media: np.ndarray
    media_present: np.ndarray

    @property
    def dim(self):
        return self.text.shape[1]


@dataclass(frozen=True)
class InteractionGraph:
    """User-item bipartite edges with per-node degrees."""

    user_idx: np.ndarray
    item_idx: np.ndarray
    user_degree: np.ndarray
    item_degree: np.ndarray

    @property
    def n_edges(self):
        return int(self.user_idx.shape[0])

    @property
    def n_users(self):
        return int(self.user_degree.shape[0])

    @property
    def n_items(self):
        return int(self.item_degree.shape[0])


@dataclass(frozen=True)
class PartialBundleView:
    """Seed items of a bundle plus the missing items to predict."""

    bundle_index: int
    seeds: frozenset
    targets: frozenset

    def __post_init__(self):
        if self.seeds & self.targets:
            raise IntegrityError("partial view: seeds and targets overlap")
        if not self.seeds or not self.targets:
            raise IntegrityError("partial view: seeds and targets must both be nonempty")


# ---------------------------------------------------------------------------
# readers
# ---------------------------------------------------------------------------

def _read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            pairs.append((parts[0], parts[1], lineno))
    return pairs


def read_item_index(path):
    rows = {}
    tokens = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected token<TAB>row")
            token = parts[0]
            try:
                row = int(parts[1])
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: row is not an integer") from exc
            if token in tokens:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate item token {token!r}")
            if row in rows:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate row {row}")
            tokens[token] = row
            rows[row] = token
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise CorpusFormatError(f"{path}: rows are not dense 0..{n - 1}")
    ordered = tuple(rows[r] for r in range(n))
    return ordered, tokens


def read_features(path, expected_rows=None):
    """Read one binary feature file; returns (matrix, presence flags)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise CorpusFormatError(f"{path}: truncated header")
    rows, dim = struct.unpack_from("<II", blob, 4)
    if expected_rows is not None and rows != expected_rows:
        raise CorpusFormatError(f"{path}: {rows} feature rows, item index has {expected_rows}")
    bitmap_len = (rows + 7) // 8
    need = 12 + bitmap_len + rows * dim * 4
    if len(blob) != need:
        raise CorpusFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    bitmap = np.frombuffer(blob, dtype=np.uint8, count=bitmap_len, offset=12)
    present = np.unpackbits(bitmap, bitorder="little")[:rows].astype(bool)
    data = np.frombuffer(blob, dtype="<f4", offset=12 + bitmap_len).reshape(rows, dim)
    data = data.astype(np.float32, copy=True)
    data[~present] = 0.0  # content of absent rows is ignored
    return data, present


def write_features(path, data, present):
    rows, dim = data.shape
    bitmap = np.packbits(present.astype(np.uint8), bitorder="little")
    bitmap_len = (rows + 7) // 8
    if bitmap.shape[0] < bitmap_len:
        bitmap = np.pad(bitmap, (0, bitmap_len - bitmap.shape[0]))
    out = data.astype("<f4", copy=True)
    out[~np.asarray(present, dtype=bool)] = 0.0
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(bitmap.tobytes())
        fh.write(out.tobytes())


def load(interactions_path, affiliations_path, text_feat_path, media_feat_path, index_path):
    """Load, validate and intern the full corpus.

    Returns ``(catalog, features, graph)``. Referential integrity failures
    (unknown tokens, duplicate edges, malformed bundles) raise
    :class:`IntegrityError` naming the offending line.
    """
    item_tokens, item_index = read_item_index(index_path)
    n_items = len(item_tokens)

    # bundles, in file order; membership must be duplicate-free and size >= 2
    bundle_tokens = []
    bundle_members = []
    bundle_pos = {}
    for bt, it, lineno in _read_pairs(affiliations_path):
        if it not in item_index:
            raise IntegrityError(f"{affiliations_path}:{lineno}: unknown item token {it!r}")
        if bt not in bundle_pos:
            bundle_pos[bt] = len(bundle_tokens)
            bundle_tokens.append(bt)
            bundle_members.append([])
        members = bundle_members[bundle_pos[bt]]
        idx = item_index[it]
        if idx in members:
            raise IntegrityError(f"{affiliations_path}:{lineno}: duplicate item {it!r} in bundle {bt!r}")
        members.append(idx)
    for bt, members in zip(bundle_tokens, bundle_members):
        if len(members) < 2:
            raise IntegrityError(f"{affiliations_path}: bundle {bt!r} has fewer than 2 items")
    bundles = tuple(frozenset(m) for m in bundle_members)

    # interactions; users interned in first-appearance order
    user_tokens = []
    user_index = {}
    u_list = []
    i_list = []
    seen = set()
    for ut, it, lineno in _read_pairs(interactions_path):
        if it not in item_index:
            raise IntegrityError(f"{interactions_path}:{lineno}: unknown item token {it!r}")
        if ut not in user_index:
            user_index[ut] = len(user_tokens)
            user_tokens.append(ut)
        u = user_index[ut]
        i = item_index[it]
        if (u, i) in seen:
            raise IntegrityError(f"{interactions_path}:{lineno}: duplicate edge ({ut!r}, {it!r})")
        seen.add((u, i))
        u_list.append(u)
        i_list.append(i)
    n_users = len(user_tokens)
    user_idx = np.asarray(u_list, dtype=np.int64)
    item_idx = np.asarray(i_list, dtype=np.int64)
    user_degree = np.bincount(user_idx, minlength=n_users).astype(np.int64)
    item_degree = np.bincount(item_idx, minlength=n_items).astype(np.int64)

    text, text_present = read_features(text_feat_path, expected_rows=n_items)
    media, media_present = read_features(media_feat_path, expected_rows=n_items)
    if media.shape[1] != text.shape[1]:
        raise CorpusFormatError(
            f"feature width mismatch: text {text.shape[1]} vs media {media.shape[1]}"
        )
    both_absent = ~(text_present | media_present)
    if both_absent.any():
        missing = int(np.flatnonzero(both_absent)[0])
        raise IntegrityError(
            f"item {item_tokens[missing]!r} has neither text nor media feature"
        )

    catalog = Catalog(
        item_tokens=item_tokens,
        user_tokens=tuple(user_tokens),
        bundle_tokens=tuple(bundle_tokens),
        bundles=bundles,
        item_index=dict(item_index),
        user_index=user_index,
    )
    features = FeatureTable(text=text, text_present=text_present, media=media, media_present=media_present)
    graph = InteractionGraph(
        user_idx=user_idx, item_idx=item_idx, user_degree=user_degree, item_degree=item_degree
    )
    log.info(
        "corpus loaded: #U=%d #I=%d #B=%d #B-I=%d #U-I=%d",
        catalog.n_users,
        catalog.n_items,
        catalog.n_bundles,
        sum(len(b) for b in bundles),
        graph.n_edges,
    )
    return catalog, features, graph


def save(out_dir, catalog, features, graph):
    """Write the corpus back in the standard formats (round-trip of :func:`load`)."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "item_index.tsv"), "w", encoding="utf-8") as fh:
        for row, token in enumerate(catalog.item_tokens):
            fh.write(f"{token}\t{row}\n")
    with open(os.path.join(out_dir, "affiliations.tsv"), "w", encoding="utf-8") as fh:
        for bt, members in zip(catalog.bundle_tokens, catalog.bundles):
            for idx in sorted(members):
                fh.write(f"{bt}\t{catalog.item_tokens[idx]}\n")
    with open(os.path.join(out_dir, "interactions.tsv"), "w", encoding="utf-8") as fh:
        for u, i in zip(graph.user_idx, graph.item_idx):
            fh.write(f"{catalog.user_tokens[u]}\t{catalog.item_tokens[i]}\n")
    write_features(os.path.join(out_dir, "features_text.bin"), features.text, features.text_present)
    write_features(os.path.join(out_dir, "features_media.bin"), features.media, features.media_present)


def corpus_paths(data_dir):
    """Standard file names inside a corpus directory."""
    import os

    return {
        "interactions": os.path.join(data_dir, "interactions.tsv"),
        "affiliations": os.path.join(data_dir, "affiliations.tsv"),
        "index": os.path.join(data_dir, "item_index.tsv"),
        "text": os.path.join(data_dir, "features_text.bin"),
        "media": os.path.join(data_dir, "features_media.bin"),
    }


def load_dir(data_dir):
    p = corpus_paths(data_dir)
    return load(p["interactions"], p["affiliations"], p["text"], p["media"], p["index"])


# ---------------------------------------------------------------------------
# splitting and partial views
# ---------------------------------------------------------------------------

def split_indices(total, seed):
    """8:1:1 partition of range(total): floor/floor/remainder, shuffled by ``seed``."""
    if total < 10:
        raise InsufficientDataError(f"need at least 10 bundles to split, have {total}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(total)
    n_train = int(0.8 * total)
    n_val = int(0.1 * total)
    train = sorted(int(b) for b in order[:n_train])
    val = sorted(int(b) for b in order[n_train : n_train + n_val])
    test = sorted(int(b) for b in order[n_train + n_val :])
    return train, val, test


def split_bundles(catalog, seed):
    """Partition bundle indices 8:1:1; the shuffle is driven solely by ``seed``."""
    return split_indices(catalog.n_bundles, seed)


def sample_partial(bundle, seed_ratio, rng, bundle_index=-1):
    """Draw a seed/target split of one bundle, uniformly without replacement.

    ``|seeds| = max(1, floor(seed_ratio * |bundle|))``; if that would leave
    no targets one item is moved back.
    """
    items = sorted(bundle)
    n = len(items)
    if n < 2:
        raise IntegrityError(f"bundle must have >= 2 items, has {n}")
    if not 0.0 < seed_ratio < 1.0:
        raise IntegrityError(f"seed_ratio must lie in (0, 1), got {seed_ratio}")
    n_seeds = max(1, int(seed_ratio * n))
    if n_seeds >= n:
        n_seeds = n - 1
    order = rng.permutation(n)
    seeds = frozenset(items[k] for k in order[:n_seeds])
    targets = frozenset(items[k] for k in order[n_seeds:])
    return PartialBundleView(bundle_index=bundle_index, seeds=seeds, targets=targets)


def corrupt_partial(view, mode, rate, rng, n_items):
    """Corrupt a view's seed set for robustness protocols; targets unchanged.

    ``sparsify`` removes ``floor(rate * |seeds|)`` seeds (at least one seed
    always survives); ``noisify`` adds that many uniformly random items that
    belong neither to the seeds nor to the targets of the original bundle.
    """
    if not 0.0 <= rate <= 0.9:
        raise IntegrityError(f"corruption rate must lie in [0, 0.9], got {rate}")
    seeds = sorted(view.seeds)
    k = int(rate * len(seeds))
    if mode == "sparsify":
        k = min(k, len(seeds) - 1)
        if k <= 0:
            return view
        drop = rng.choice(len(seeds), size=k, replace=False)
        kept = frozenset(s for pos, s in enumerate(seeds) if pos not in set(int(x) for x in drop))
        return PartialBundleView(bundle_index=view.bundle_index, seeds=kept, targets=view.targets)
    if mode == "noisify":
        if k <= 0:
            return view
        member = view.seeds | view.targets
        candidates = np.asarray([i for i in range(n_items) if i not in member], dtype=np.int64)
        if candidates.shape[0] < k:
            raise IntegrityError("not enough non-member items to add noise")
        picked = rng.choice(candidates, size=k, replace=False)
        noisy = view.seeds | frozenset(int(x) for x in picked)
        return PartialBundleView(bundle_index=view.bundle_index, seeds=noisy, targets=view.targets)
    raise IntegrityError(f"unknown corruption mode {mode!r}")


def warm_items(catalog, train_bundle_indices):
    """Items that appear in at least one training bundle."""
    warm = set()
    for b in train_bundle_indices:
        warm |= catalog.bundles[b]
    return frozenset(warm)
