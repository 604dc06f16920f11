"""Rating datasets: CSV ingestion, density filtering, splits, synthesis.

A dataset is a deduplicated sparse list of (user, item, rating) integer
triples on a 1..rho scale, with contiguous 0-based user/item indices and
the original identifiers kept as labels. Splits carve off whole test
users and fix, per test user, a seeded permutation of their rated items;
the first ``kappa`` entries of that permutation are the "known" prefix
revealed to a model at stage ``kappa`` and the remainder is held out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .container import load_json, save_json
from .mcvq import McvqModel

SPLIT_FILE_VERSION = 1


class CsvParseError(ValueError):
    """Malformed CSV input; message carries the 1-based line number."""


@dataclass(frozen=True)
class RatingsDataset:
    """Deduplicated sparse ratings with contiguous indices.

    ``users``, ``items`` and ``ratings`` are parallel int64 arrays; at
    most one observation exists per (user, item) pair.
    """

    n_users: int
    n_items: int
    rho: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_labels: tuple[str, ...] | None = None
    item_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("users", "items", "ratings"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (self.users.shape == self.items.shape == self.ratings.shape) or self.users.ndim != 1:
            raise ValueError("users, items and ratings must be parallel 1-d arrays")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.n_obs:
            if self.users.min() < 0 or (self.n_users and self.users.max() >= self.n_users):
                raise ValueError("user index out of range")
            if self.items.min() < 0 or (self.n_items and self.items.max() >= self.n_items):
                raise ValueError("item index out of range")
            if self.ratings.min() < 1 or self.ratings.max() > self.rho:
                raise ValueError(f"ratings must lie in 1..{self.rho}")
            pairs = self.users * self.n_items + self.items
            if np.unique(pairs).size != pairs.size:
                raise ValueError("duplicate (user, item) observation")
        if self.user_labels is not None and len(self.user_labels) != self.n_users:
            raise ValueError("user_labels length must equal n_users")
        if self.item_labels is not None and len(self.item_labels) != self.n_items:
            raise ValueError("item_labels length must equal n_items")

    @property
    def n_obs(self) -> int:
        return self.users.shape[0]

    def counts_per_user(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def counts_per_item(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def by_user(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-user (items, ratings) views, users ordered 0..n_users-1."""
        order = np.argsort(self.users, kind="stable")
        sorted_users = self.users[order]
        bounds = np.searchsorted(sorted_users, np.arange(self.n_users + 1))
        return [
            (self.items[order[bounds[u] : bounds[u + 1]]], self.ratings[order[bounds[u] : bounds[u + 1]]])
            for u in range(self.n_users)
        ]

    def to_dense(self) -> np.ndarray:
        """(n_users, n_items) matrix with 0 marking missing ratings."""
        dense = np.zeros((self.n_users, self.n_items), dtype=np.int64)
        dense[self.users, self.items] = self.ratings
        return dense


def load_csv(
    path: str | Path,
    rho: int,
    user_col: str = "user",
    item_col: str = "item",
    rating_col: str = "rating",
    delimiter: str = ",",
) -> RatingsDataset:
    """Parse a header-bearing CSV of ratings.

    User and item identifiers may be arbitrary strings; they are compacted
    to 0-based indices in order of first appearance and kept as labels.
    Repeated (user, item) pairs keep the last occurrence. Ratings must
    parse as integers in ``1..rho``; violations raise ``CsvParseError``
    naming the line.
    """
    users: dict[str, int] = {}
    items: dict[str, int] = {}
    cells: dict[tuple[int, int], int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: line 1: empty file") from None
        header = [h.strip() for h in header]
        try:
            u_ix, i_ix, r_ix = (header.index(c) for c in (user_col, item_col, rating_col))
        except ValueError:
            raise CsvParseError(
                f"{path}: line 1: header must contain columns "
                f"{user_col!r}, {item_col!r}, {rating_col!r}; got {header}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) <= max(u_ix, i_ix, r_ix):
                raise CsvParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            user_key = row[u_ix].strip()
            item_key = row[i_ix].strip()
            raw = row[r_ix].strip()
            try:
                rating = int(raw)
            except ValueError:
                raise CsvParseError(f"{path}: line {lineno}: rating {raw!r} is not an integer") from None
            if not 1 <= rating <= rho:
                raise CsvParseError(f"{path}: line {lineno}: rating {rating} outside scale 1..{rho}")
            u = users.setdefault(user_key, len(users))
            i = items.setdefault(item_key, len(items))
            cells[(u, i)] = rating  # last write wins
    triples = np.array([(u, i, r) for (u, i), r in cells.items()], dtype=np.int64).reshape(-1, 3)
    return RatingsDataset(
        n_users=len(users),
        n_items=len(items),
        rho=rho,
        users=triples[:, 0],
        items=triples[:, 1],
        ratings=triples[:, 2],
        user_labels=tuple(users),
        item_labels=tuple(items),
    )


def save_csv(d: RatingsDataset, path: str | Path) -> None:
    """Inverse of ``load_csv``; rows sorted by (user, item) for stable bytes."""
    user_labels = d.user_labels or tuple(f"u{i}" for i in range(d.n_users))
    item_labels = d.item_labels or tuple(f"i{j}" for j in range(d.n_items))
    order = np.lexsort((d.items, d.users))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "item", "rating"])
        for ix in order:
            writer.writerow([user_labels[d.users[ix]], item_labels[d.items[ix]], int(d.ratings[ix])])


def _compact(d: RatingsDataset, keep_users: np.ndarray, keep_items: np.ndarray) -> RatingsDataset:
    """Subset to the given users/items and reindex, preserving order."""
    keep_users = np.flatnonzero(keep_users) if keep_users.dtype == bool else keep_users
    keep_items = np.flatnonzero(keep_items) if keep_items.dtype == bool else keep_items
    user_map = np.full(d.n_users, -1, dtype=np.int64)
    item_map = np.full(d.n_items, -1, dtype=np.int64)
    user_map[keep_users] = np.arange(keep_users.size)
    item_map[keep_items] = np.arange(keep_items.size)
    mask = (user_map[d.users] >= 0) & (item_map[d.items] >= 0)
    return RatingsDataset(
        n_users=keep_users.size,
        n_items=keep_items.size,
        rho=d.rho,
        users=user_map[d.users[mask]],
        items=item_map[d.items[mask]],
        ratings=d.ratings[mask],
        user_labels=None if d.user_labels is None else tuple(d.user_labels[u] for u in keep_users),
        item_labels=None if d.item_labels is None else tuple(d.item_labels[i] for i in keep_items),
    )


def density_filter(
    d: RatingsDataset, min_ratings_per_user: int, min_ratings_per_item: int, iterate: bool = True
) -> RatingsDataset:
    """Drop sparse users/items and compact the index space.

    By default alternates user and item threshold passes until a fixed
    point (dropping a user can push an item below threshold and vice
    versa); ``iterate=False`` applies a single user pass then a single
    item pass. Raises ``ValueError`` if nothing survives.
    """
    out = d
    while True:
        user_ok = out.counts_per_user() >= min_ratings_per_user
        if not user_ok.all():
            out = _compact(out, user_ok, np.ones(out.n_items, dtype=bool))
        item_ok = out.counts_per_item() >= min_ratings_per_item
        if not item_ok.all():
            out = _compact(out, np.ones(out.n_users, dtype=bool), item_ok)
        if out.n_obs == 0 or out.n_users == 0 or out.n_items == 0:
            raise ValueError(
                f"density filter (min_user={min_ratings_per_user}, min_item={min_ratings_per_item}) "
                "eliminated all data"
            )
        if not iterate:
            return out
        if user_ok.all() and item_ok.all():
            return out


@dataclass(frozen=True)
class SplitSpec:
    """Parameters of a train/test split (apply after density filtering)."""

    n_test_users: int
    seed: int
    min_ratings_per_user: int = 0
    min_ratings_per_item: int = 0


@dataclass(frozen=True)
class ReplayMask:
    """Per-test-user item schedules driving staged replay.

    ``schedules[u]`` is a permutation of test user ``u``'s rated items;
    ``known(u, kappa)`` is its length-``kappa`` prefix and
    ``held_out(u, kappa)`` the remainder. Together they partition the
    user's rated items at every stage. ``item_labels`` names the item
    space the indices live in, so a mask loaded from disk can be
    translated into another catalog's indexing (CSV round trips
    renumber items by first appearance).
    """

    seed: int
    schedules: tuple[np.ndarray, ...]
    item_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        frozen = []
        for s in self.schedules:
            arr = np.ascontiguousarray(s, dtype=np.int64)
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "schedules", tuple(frozen))
        if self.item_labels is not None:
            object.__setattr__(self, "item_labels", tuple(self.item_labels))

    @property
    def n_users(self) -> int:
        return len(self.schedules)

    def known(self, user: int, kappa: int) -> np.ndarray:
        return self.schedules[user][:kappa]

    def held_out(self, user: int, kappa: int) -> np.ndarray:
        return self.schedules[user][kappa:]

    def remapped(self, catalog: tuple[str, ...]) -> "ReplayMask":
        """Translate schedules into ``catalog``'s item indexing.

        Scheduled items whose labels are absent from the catalog are
        dropped (a model trained on that catalog cannot score them).
        Requires ``item_labels``.
        """
        if self.item_labels is None:
            raise ValueError("mask carries no item labels to remap by")
        lookup = {label: ix for ix, label in enumerate(catalog)}
        out = []
        for s in self.schedules:
            translated = [lookup[self.item_labels[j]] for j in s if self.item_labels[j] in lookup]
            out.append(np.asarray(translated, dtype=np.int64))
        return ReplayMask(seed=self.seed, schedules=tuple(out), item_labels=tuple(catalog))

    def to_doc(self, user_labels: tuple[str, ...] | None = None) -> dict:
        return {
            "format": "activecf-split",
            "version": SPLIT_FILE_VERSION,
            "seed": self.seed,
            "n_test_users": self.n_users,
            "user_labels": list(user_labels) if user_labels is not None else None,
            "item_labels": list(self.item_labels) if self.item_labels is not None else None,
            "schedules": [[int(i) for i in s] for s in self.schedules],
        }

    def save(self, path: str | Path, user_labels: tuple[str, ...] | None = None) -> None:
        save_json(path, self.to_doc(user_labels))

    @classmethod
    def load(cls, path: str | Path) -> "ReplayMask":
        doc = load_json(path, expected_format="activecf-split", max_version=SPLIT_FILE_VERSION)
        labels = doc.get("item_labels")
        return cls(
            seed=doc["seed"],
            schedules=tuple(np.asarray(s, dtype=np.int64) for s in doc["schedules"]),
            item_labels=tuple(labels) if labels is not None else None,
        )


def make_split(d: RatingsDataset, spec: SplitSpec) -> tuple[RatingsDataset, RatingsDataset, ReplayMask]:
    """Carve off whole test users and fix their replay schedules.

    Expects an already density-filtered dataset when the spec carries
    thresholds of zero; otherwise applies ``density_filter`` first. Test
    users are drawn without replacement by a generator seeded with
    ``spec.seed``; the same seed also permutes each test user's items.
    """
    if spec.min_ratings_per_user or spec.min_ratings_per_item:
        d = density_filter(d, spec.min_ratings_per_user, spec.min_ratings_per_item)
    if not 0 <= spec.n_test_users <= d.n_users:
        raise ValueError(f"n_test_users must lie in 0..{d.n_users}")
    rng = np.random.default_rng(spec.seed)
    test_users = np.sort(rng.choice(d.n_users, size=spec.n_test_users, replace=False))
    is_test = np.zeros(d.n_users, dtype=bool)
    is_test[test_users] = True
    all_items = np.arange(d.n_items)
    train = _compact(d, ~is_test, all_items)
    test = _compact(d, is_test, all_items)
    schedules = []
    for items, _ in test.by_user():
        ordered = np.sort(items)
        schedules.append(ordered[rng.permutation(ordered.size)])
    return train, test, ReplayMask(
        seed=spec.seed, schedules=tuple(schedules), item_labels=d.item_labels
    )


def remap_items(d: RatingsDataset, catalog: tuple[str, ...]) -> RatingsDataset:
    """Re-index ``d``'s items into ``catalog``'s label order.

    Observations of items absent from the catalog are dropped (a model
    trained on that catalog cannot score them); users are kept even
    when all their observations vanish. Requires item labels on ``d``.
    """
    if d.item_labels is None:
        raise ValueError("dataset carries no item labels to remap by")
    lookup = {label: ix for ix, label in enumerate(catalog)}
    trans = np.array([lookup.get(label, -1) for label in d.item_labels], dtype=np.int64)
    mapped = trans[d.items]
    keep = mapped >= 0
    return RatingsDataset(
        n_users=d.n_users,
        n_items=len(catalog),
        rho=d.rho,
        users=d.users[keep],
        items=mapped[keep],
        ratings=d.ratings[keep],
        user_labels=d.user_labels,
        item_labels=tuple(catalog),
    )


def generate_synthetic(
    gt: McvqModel, n_users: int, density: float, seed: int
) -> RatingsDataset:
    """Sample a ratings dataset from a ground-truth vector-quantized model.

    Each user draws one hard attitude per quantizer from the prior. Each
    (user, item) pair is observed independently with probability
    ``density``; an observed pair draws the item's type from its type
    distribution and then a rating from the binned multinomial of that
    (item, type, attitude) cell.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    m_items, n_types, n_atts = gt.rating_mean.shape
    att_cdf = gt.attitude_prior.cumsum(axis=1)
    attitudes = (rng.random((n_users, n_types, 1)) < att_cdf[None]).argmax(axis=2)  # (n_users, K)
    observed = rng.random((n_users, m_items)) < density
    type_cdf = gt.type_dist.cumsum(axis=1)
    users_out, items_out, ratings_out = [], [], []
    for j in range(m_items):
        who = np.flatnonzero(observed[:, j])
        if who.size == 0:
            continue
        types = (rng.random((who.size, 1)) < type_cdf[j][None]).argmax(axis=1)
        att = attitudes[who, types]
        cell_cdf = gt.rating_multinomial[j].cumsum(axis=-1)  # (K, L, rho)
        ratings = (rng.random((who.size, 1)) < cell_cdf[types, att]).argmax(axis=1) + 1
        users_out.append(who)
        items_out.append(np.full(who.size, j, dtype=np.int64))
        ratings_out.append(ratings.astype(np.int64))
    if users_out:
        users = np.concatenate(users_out)
        items = np.concatenate(items_out)
        ratings = np.concatenate(ratings_out)
        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
    else:
        users = items = ratings = np.zeros(0, dtype=np.int64)
    return RatingsDataset(
        n_users=n_users,
        n_items=m_items,
        rho=gt.rho,
        users=users,
        items=items,
        ratings=ratings,
        user_labels=tuple(f"u{i}" for i in range(n_users)),
        item_labels=tuple(f"i{j}" for j in range(m_items)),
    )


def separated_ground_truth(
    m_items: int = 50,
    n_types: int = 3,
    n_attitudes: int = 2,
    rho: int = 6,
    seed: int = 0,
    frac_polarizing: float = 0.5,
    frac_quality: float = 0.3,
    type_concentration: float = 0.9,
) -> McvqModel:
    """Well-separated synthetic ground truth mixing three item profiles.

    Each item leans heavily toward a home quantizer (``type_concentration``
    mass). Profiles: *polarizing* items are loved by one attitude of
    their home quantizer and disliked by the other, and read neutral
    through any other quantizer (the contrast is what makes the home
    assignment identifiable and what an active query can exploit);
    *quality* items get the same mid-spread mean from every attitude
    (they anchor recommendation value but respond to no query); the
    remainder are *noise* items with near-flat high-variance rating
    distributions (high marginal entropy, no information).
    """
    if not 0 <= frac_polarizing + frac_quality <= 1:
        raise ValueError("profile fractions must sum to at most 1")
    rng = np.random.default_rng(seed)
    type_dist = np.full((m_items, n_types), (1.0 - type_concentration) / max(n_types - 1, 1)) if n_types > 1 else np.ones((m_items, 1))
    means = np.empty((m_items, n_types, n_attitudes))
    variances = np.empty((m_items, n_types, n_attitudes))
    # stratify profiles across home quantizers: a quantizer with almost no
    # polarizing items gives users nothing to reveal their attitude with,
    # leaving that axis unidentifiable no matter how much data is drawn
    profiles = np.empty(m_items, dtype=object)
    for c in range(n_types):
        members = np.arange(c, m_items, n_types)
        n_pol = int(round(frac_polarizing * members.size))
        n_qual = int(round(frac_quality * members.size))
        labels = np.array(
            ["polarizing"] * n_pol
            + ["quality"] * n_qual
            + ["noise"] * (members.size - n_pol - n_qual)
        )
        rng.shuffle(labels)
        profiles[members] = labels
    for j in range(m_items):
        home = j % n_types
        if n_types > 1:
            type_dist[j, home] = type_concentration
        if profiles[j] == "polarizing":
            loved_by = rng.integers(n_attitudes)
            hi = rng.uniform(5.2, 5.8) * rho / 6.0
            lo = rng.uniform(1.3, 1.9) * rho / 6.0
            row = np.where(np.arange(n_attitudes) == loved_by, hi, lo)
            neutral = (1 + rho) / 2.0 + rng.normal(0, 0.15, size=(n_types, n_attitudes))
            means[j] = neutral
            means[j, home] = row
            variances[j] = 0.8
            variances[j, home] = 0.25
        elif profiles[j] == "quality":
            level = rng.uniform(2.0, 4.9) * rho / 6.0
            means[j] = level + rng.normal(0, 0.05, size=(n_types, n_attitudes))
            variances[j] = 0.25
        else:
            means[j] = (1 + rho) / 2.0 + rng.normal(0, 0.3, size=(n_types, n_attitudes))
            variances[j] = (rho * 0.7) ** 2
    means = np.clip(means, 1.0, float(rho))
    attitude_prior = np.full((n_types, n_attitudes), 1.0 / n_attitudes)
    return McvqModel.from_gaussians(type_dist, attitude_prior, means, variances, rho)
