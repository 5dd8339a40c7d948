"""MovieLens-format parsing, tag indexes, and cross-validation splits."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# Genre flag order of the 100K `u.item` file (last 19 pipe-separated fields).
ML100K_GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
)

RATING_FORMATS = ("ml-100k", "ml-1m", "csv")
TAG_FORMATS = ("ml-100k-genres", "ml-1m-genres")


class ParseError(ValueError):
    """A data file line that does not match its declared format."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class DuplicateRatingError(ValueError):
    """The same (user, item) pair appears more than once."""


class RatingDataset:
    """Sparse observed rating triples plus dense id indexes.

    Immutable after construction; safe for concurrent reads.  Ratings
    are stored as integer stars in 1..Z; normalization to the [0, 1]
    scale happens where subproblems are assembled.
    """

    def __init__(self, user_ids, item_ids, ratings, z):
        self.user_ids = np.asarray(user_ids, dtype=np.int64)
        self.item_ids = np.asarray(item_ids, dtype=np.int64)
        self.ratings = np.asarray(ratings, dtype=np.int64)
        self.z = int(z)
        if self.z < 1:
            raise ValueError(f"rating-level count must be >= 1, got {z}")
        if not (self.user_ids.size == self.item_ids.size == self.ratings.size):
            raise ValueError("triple arrays must have equal length")
        if self.ratings.size and (self.ratings.min() < 1 or self.ratings.max() > self.z):
            bad = int(self.ratings[(self.ratings < 1) | (self.ratings > self.z)][0])
            raise ValueError(f"rating {bad} outside [1, {self.z}]")

        self.unique_users, self.user_rows = np.unique(self.user_ids, return_inverse=True)
        self.unique_items, self.item_rows = np.unique(self.item_ids, return_inverse=True)
        self._reject_duplicates()
        self.user_counts = np.bincount(self.user_rows, minlength=self.n_users)
        self.item_counts = np.bincount(self.item_rows, minlength=self.n_items)
        self.user_index = {int(u): r for r, u in enumerate(self.unique_users)}
        self.item_index = {int(i): r for r, i in enumerate(self.unique_items)}
        for arr in (self.user_ids, self.item_ids, self.ratings,
                    self.unique_users, self.unique_items,
                    self.user_rows, self.item_rows,
                    self.user_counts, self.item_counts):
            arr.flags.writeable = False

    def _reject_duplicates(self):
        if self.n_ratings == 0:
            return
        keys = self.user_rows.astype(np.int64) * self.n_items + self.item_rows
        uniq, counts = np.unique(keys, return_counts=True)
        if counts.max(initial=0) > 1:
            key = int(uniq[np.argmax(counts)])
            u = int(self.unique_users[key // self.n_items])
            i = int(self.unique_items[key % self.n_items])
            raise DuplicateRatingError(f"duplicate rating for user {u}, item {i}")

    @classmethod
    def from_triples(cls, triples, z=None):
        """Build a dataset from (user, item, stars) triples.

        When ``z`` is omitted it is inferred as the maximum observed
        rating; an empty triple list then raises, since Z is undefined.
        """
        triples = list(triples)
        if not triples:
            if z is None:
                raise ValueError("empty dataset: an explicit rating-level count Z "
                                 "is required")
            return cls([], [], [], z)
        users, items, ratings = zip(*triples)
        if z is None:
            z = max(ratings)
        return cls(users, items, ratings, z)

    @property
    def n_users(self):
        return self.unique_users.size

    @property
    def n_items(self):
        return self.unique_items.size

    @property
    def n_ratings(self):
        return self.ratings.size

    def triples(self):
        """The observed triples as a list of (user, item, stars) int tuples."""
        return list(zip(self.user_ids.tolist(), self.item_ids.tolist(),
                        self.ratings.tolist()))

    def global_mean(self):
        if self.n_ratings == 0:
            raise ValueError("empty dataset has no mean rating")
        return float(self.ratings.mean())

    def __repr__(self):
        return (f"RatingDataset(users={self.n_users}, items={self.n_items}, "
                f"ratings={self.n_ratings}, Z={self.z})")


@dataclass
class TagIndex:
    """Mapping from tag names to the item ids carrying that tag."""

    items_by_tag: dict

    def __post_init__(self):
        self.items_by_tag = {t: tuple(sorted(set(ids)))
                             for t, ids in self.items_by_tag.items()}

    @property
    def tags(self):
        return sorted(self.items_by_tag)

    def items(self, tag):
        return self.items_by_tag[tag]

    def __len__(self):
        return len(self.items_by_tag)

    def restricted_to(self, item_ids):
        """Drop item ids outside ``item_ids``; tags left empty are removed."""
        keep = set(int(i) for i in item_ids)
        out, dropped = {}, 0
        for tag, ids in self.items_by_tag.items():
            kept = tuple(i for i in ids if i in keep)
            dropped += len(ids) - len(kept)
            if kept:
                out[tag] = kept
        if dropped:
            log.warning("dropped %d tag assignments to unknown items", dropped)
        return TagIndex(out)


def _data_lines(path):
    text = Path(path).read_text(encoding="latin-1")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield line_no, line


def load_ratings(path, fmt, z=None):
    """Parse a ratings file into a RatingDataset.

    Formats: ``ml-100k`` (user<TAB>item<TAB>rating<TAB>timestamp),
    ``ml-1m`` (UserID::MovieID::Rating::Timestamp) and ``csv``
    (user,item,rating; requires an explicit ``z``).  Timestamps are
    discarded; Z defaults to the maximum observed rating.
    """
    if fmt not in RATING_FORMATS:
        raise ValueError(f"unknown ratings format {fmt!r}; expected one of {RATING_FORMATS}")
    if fmt == "csv" and z is None:
        raise ValueError("csv ratings need an explicit rating-level count (--z)")
    sep = {"ml-100k": "\t", "ml-1m": "::", "csv": ","}[fmt]
    n_fields = 3 if fmt == "csv" else 4

    triples = []
    for line_no, line in _data_lines(path):
        fields = line.split(sep)
        if fmt == "csv" and line_no == 1 and fields[:3] == ["user", "item", "rating"]:
            continue
        if len(fields) != n_fields:
            raise ParseError(path, line_no,
                             f"expected {n_fields} {fmt} fields, got {len(fields)}")
        try:
            triples.append((int(fields[0]), int(fields[1]), int(fields[2])))
        except ValueError:
            raise ParseError(path, line_no, f"non-integer field in {line!r}") from None
    return RatingDataset.from_triples(triples, z=z)


def dump_ratings(dataset, path, fmt):
    """Write a dataset back out in one of the accepted formats."""
    if fmt not in RATING_FORMATS:
        raise ValueError(f"unknown ratings format {fmt!r}")
    lines = []
    if fmt == "csv":
        lines.append("user,item,rating")
    template = {"ml-100k": "{u}\t{i}\t{r}\t0", "ml-1m": "{u}::{i}::{r}::0",
                "csv": "{u},{i},{r}"}[fmt]
    for u, i, r in zip(dataset.user_ids, dataset.item_ids, dataset.ratings):
        lines.append(template.format(u=u, i=i, r=r))
    Path(path).write_text("\n".join(lines) + "\n", encoding="latin-1")


def load_tags(path, fmt, dataset=None):
    """Parse an item/genre file into a TagIndex.

    ``ml-100k-genres`` reads `u.item` rows whose last 19 pipe-separated
    fields are 0/1 flags against ML100K_GENRES; a row with no flag set
    lands under "unknown".  ``ml-1m-genres`` reads
    `MovieID::Title::Genre1|Genre2|...`.  When ``dataset`` is given,
    assignments to items absent from it are dropped with a warning.
    """
    if fmt not in TAG_FORMATS:
        raise ValueError(f"unknown tag format {fmt!r}; expected one of {TAG_FORMATS}")
    by_tag = {}

    def add(tag, item):
        by_tag.setdefault(tag, []).append(item)

    for line_no, line in _data_lines(path):
        if fmt == "ml-100k-genres":
            fields = line.split("|")
            if len(fields) < 5 + len(ML100K_GENRES):
                raise ParseError(path, line_no,
                                 f"expected {5 + len(ML100K_GENRES)} fields, got {len(fields)}")
            flags = fields[-len(ML100K_GENRES):]
            try:
                item = int(fields[0])
                flags = [int(f) for f in flags]
            except ValueError:
                raise ParseError(path, line_no, "malformed genre flags") from None
            if any(f not in (0, 1) for f in flags):
                raise ParseError(path, line_no, "genre flags must be 0/1")
            tagged = [g for g, f in zip(ML100K_GENRES, flags) if f]
            for tag in tagged or ["unknown"]:
                add(tag, item)
        else:
            fields = line.split("::")
            if len(fields) != 3:
                raise ParseError(path, line_no, f"expected 3 fields, got {len(fields)}")
            try:
                item = int(fields[0])
            except ValueError:
                raise ParseError(path, line_no, f"bad movie id {fields[0]!r}") from None
            genres = [g for g in fields[2].split("|") if g]
            if not genres:
                raise ParseError(path, line_no, "empty genre list")
            for tag in genres:
                add(tag, item)

    index = TagIndex(by_tag)
    if dataset is not None:
        index = index.restricted_to(dataset.unique_items)
    return index


@dataclass
class FoldSplit:
    """One cross-validation fold: a training dataset and held-out triples."""

    fold: int
    train: RatingDataset
    test: list


def split_folds(dataset, n_folds=5, rng_seed=0):
    """Shuffle triples with a seeded RNG and partition into test blocks.

    Every triple lands in exactly one test fold; fold k trains on the
    complement.  The training dataset keeps the parent's Z even when
    the top rating is held out.
    """
    if n_folds < 2:
        raise ValueError(f"need at least 2 folds, got {n_folds}")
    m = dataset.n_ratings
    if m < n_folds:
        raise ValueError(f"cannot split {m} ratings into {n_folds} folds")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(m)
    blocks = np.array_split(order, n_folds)

    folds = []
    for k, block in enumerate(blocks):
        mask = np.ones(m, dtype=bool)
        mask[block] = False
        train = RatingDataset(dataset.user_ids[mask], dataset.item_ids[mask],
                              dataset.ratings[mask], z=dataset.z)
        test = [(int(dataset.user_ids[j]), int(dataset.item_ids[j]),
                 int(dataset.ratings[j])) for j in block]
        folds.append(FoldSplit(fold=k + 1, train=train, test=test))
    return folds


def subsample_users(dataset, fraction, rng_seed=0):
    """Keep a uniformly chosen fraction of users (for scaled-down runs)."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n_keep = max(1, int(round(dataset.n_users * fraction)))
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(dataset.unique_users, size=n_keep, replace=False)
    keep = np.isin(dataset.user_ids, chosen)
    return RatingDataset(dataset.user_ids[keep], dataset.item_ids[keep],
                         dataset.ratings[keep], z=dataset.z)
