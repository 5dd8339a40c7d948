"""Core model types for normalized nonnegative models (NNMs).

An NNM represents every user as a point on the probability simplex (a
mixture of D "stereotypes") and every item as a measurement acting on
that mixture.  In binary mode an item is a single like-vector in
[0, 1]^D; in categorical mode it is a D x Z bundle whose per-component
rows are probability distributions over the Z outcomes.  Predictions
are plain inner products.
"""

import json
from pathlib import Path

import numpy as np

# Feasibility tolerance shared by all simplex/box invariants.  Solvers
# must deliver at least this much; validation checks use it too.
ATOL = 1e-9

MODEL_FORMAT_VERSION = 1


class InvariantViolation(ValueError):
    """A vector breaks a model-type invariant (nonnegativity, sums, range)."""


class UnknownIdError(LookupError):
    """A user or item id is not present in the model."""


def simplex_vector(entries):
    """Validate and return a user vector on the probability simplex."""
    v = np.asarray(entries, dtype=float)
    problems = _check_simplex(v)
    if problems:
        raise InvariantViolation("; ".join(problems))
    return v


def like_vector(entries):
    """Validate and return a binary-mode item vector with entries in [0, 1]."""
    v = np.asarray(entries, dtype=float)
    problems = _check_like(v)
    if problems:
        raise InvariantViolation("; ".join(problems))
    return v


def measurement_bundle(columns):
    """Validate and return a categorical item bundle.

    ``columns`` holds the Z per-outcome vectors; the result is stored as
    a (D, Z) array whose column z is the effect vector of outcome z+1.
    Every component row must be a probability distribution over outcomes.
    """
    b = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    problems = _check_bundle(b)
    if problems:
        raise InvariantViolation("; ".join(problems))
    return b


def _check_simplex(v):
    problems = []
    if v.min(initial=0.0) < -ATOL:
        j = int(np.argmin(v))
        problems.append(f"negative entry {v[j]:.6g} at component {j + 1}")
    s = float(v.sum())
    if abs(s - 1.0) > ATOL:
        problems.append(f"simplex sum {s:.12g} != 1")
    return problems

def _check_like(v):
    problems = []
    if v.min(initial=0.0) < -ATOL or v.max(initial=1.0) > 1.0 + ATOL:
        j = int(np.argmax(np.maximum(-v, v - 1.0)))
        problems.append(f"entry {v[j]:.6g} outside [0, 1] at component {j + 1}")
    return problems

def _check_bundle(b):
    problems = []
    if b.min(initial=0.0) < -ATOL:
        problems.append("negative bundle entry")
    sums = b.sum(axis=1)
    bad = np.abs(sums - 1.0) > ATOL
    if bad.any():
        j = int(np.argmax(bad))
        problems.append(f"component {j + 1} outcome sum {sums[j]:.12g} != 1")
    return problems


def _stack_sorted(vectors, expected_shape, kind):
    ids = np.array(sorted(vectors), dtype=np.int64)
    if ids.size == 0:
        raise ValueError(f"model needs at least one {kind}")
    mat = np.stack([np.asarray(vectors[int(i)], dtype=float) for i in ids])
    if mat.shape[1:] != expected_shape:
        raise InvariantViolation(
            f"{kind} vectors must have shape {expected_shape}, got {mat.shape[1:]}"
        )
    return ids, mat


def _lookup_rows(sorted_ids, queried):
    """Rows of ``queried`` ids inside a sorted id array; raises on misses."""
    q = np.asarray(queried, dtype=np.int64)
    pos = np.searchsorted(sorted_ids, q)
    pos_c = np.minimum(pos, sorted_ids.size - 1)
    ok = sorted_ids[pos_c] == q
    if not np.all(ok):
        missing = q[~ok] if q.ndim else q
        raise UnknownIdError(f"unknown id(s): {np.atleast_1d(missing)[:5].tolist()}")
    return pos_c


class NnmModel:
    """A fitted normalized nonnegative model.

    Instances are immutable after construction (backing arrays are
    frozen), so prediction is safe from any number of threads.  Public
    ids are the opaque integers of the source data; rows of the stacked
    matrices follow ascending id order.

    Attributes
    ----------
    dimension : int
        Number of stereotypes D.
    num_levels : int
        Number of rating levels Z (e.g. 5 for star ratings).
    mode : str
        ``"binary"`` (items are like-vectors) or ``"categorical"``
        (items are D x Z bundles).
    user_ids, item_ids : ndarray
        Sorted id arrays.
    user_matrix : ndarray, shape (U, D)
    item_matrix : ndarray, shape (I, D) or (I, D, Z)
    """

    def __init__(self, dimension, num_levels, mode, users, items, check=True):
        if mode not in ("binary", "categorical"):
            raise ValueError(f"unknown mode {mode!r}")
        item_shape = (dimension,) if mode == "binary" else (dimension, num_levels)
        user_ids, user_matrix = _stack_sorted(users, (dimension,), "user")
        item_ids, item_matrix = _stack_sorted(items, item_shape, "item")
        self._init_from_arrays(
            dimension, num_levels, mode, user_ids, user_matrix, item_ids, item_matrix
        )
        if check:
            problems = self.validate()
            if problems:
                raise InvariantViolation(problems[0])

    @classmethod
    def from_arrays(cls, dimension, num_levels, mode, user_ids, user_matrix,
                    item_ids, item_matrix):
        """Build a model from pre-stacked arrays (ids must be sorted)."""
        self = cls.__new__(cls)
        self._init_from_arrays(
            dimension, num_levels, mode,
            np.asarray(user_ids, dtype=np.int64), np.array(user_matrix, dtype=float),
            np.asarray(item_ids, dtype=np.int64), np.array(item_matrix, dtype=float),
        )
        return self

    def _init_from_arrays(self, dimension, num_levels, mode, user_ids, user_matrix,
                          item_ids, item_matrix):
        self.dimension = int(dimension)
        self.num_levels = int(num_levels)
        self.mode = mode
        self.user_ids = user_ids
        self.item_ids = item_ids
        self.user_matrix = user_matrix
        self.item_matrix = item_matrix
        self.user_row = {int(u): r for r, u in enumerate(user_ids)}
        self.item_row = {int(i): r for r, i in enumerate(item_ids)}
        for arr in (self.user_ids, self.item_ids, self.user_matrix, self.item_matrix):
            arr.flags.writeable = False

    @property
    def n_users(self):
        return self.user_ids.size

    @property
    def n_items(self):
        return self.item_ids.size

    def user_vector(self, user_id):
        try:
            return self.user_matrix[self.user_row[int(user_id)]]
        except KeyError:
            raise UnknownIdError(f"unknown user id {user_id}") from None

    def item_vector(self, item_id):
        try:
            return self.item_matrix[self.item_row[int(item_id)]]
        except KeyError:
            raise UnknownIdError(f"unknown item id {item_id}") from None

    # -- prediction ----------------------------------------------------

    def predict_distribution(self, user_id, item_id):
        """Probability vector over the Z outcomes for one (user, item) pair.

        Defined for categorical models, and for binary models with
        Z = 2 where the result is (score, 1 - score).
        """
        p = self.user_vector(user_id)
        e = self.item_vector(item_id)
        if self.mode == "binary":
            if self.num_levels != 2:
                raise InvariantViolation(
                    "distributions need a categorical model (or binary with Z=2)"
                )
            s = float(p @ e)
            return np.array([s, 1.0 - s])
        return p @ e

    def predict_rating_argmax(self, user_id, item_id):
        """Most probable outcome z in 1..Z; ties resolve to the smallest z."""
        dist = self.predict_distribution(user_id, item_id)
        return int(np.argmax(dist)) + 1

    def predict_score_binary(self, user_id, item_id):
        """Like-probability e_i^T p_u in [0, 1] (binary mode only)."""
        if self.mode != "binary":
            raise InvariantViolation("like-scores are defined for binary models")
        p = self.user_vector(user_id)
        e = self.item_vector(item_id)
        return float(p @ e)

    def predict_star_rating(self, user_id, item_id):
        """Predicted rating on the 1..Z star scale: clamp(Z * score, 1, Z)."""
        score = self.predict_score_binary(user_id, item_id)
        return star_rating(score, self.num_levels)

    # -- validation ----------------------------------------------------

    def validate(self):
        """Return a list of invariant violations (empty when healthy).

        Violations are data, not errors: each entry names the offending
        vector and the constraint it breaks.
        """
        problems = []
        for uid, row in zip(self.user_ids, self.user_matrix):
            for msg in _check_simplex(row):
                problems.append(f"user {uid}: {msg}")
        check = _check_like if self.mode == "binary" else _check_bundle
        for iid, row in zip(self.item_ids, self.item_matrix):
            for msg in check(row):
                problems.append(f"item {iid}: {msg}")
        return problems

    # -- persistence ---------------------------------------------------

    def to_json_dict(self):
        return {
            "version": MODEL_FORMAT_VERSION,
            "mode": self.mode,
            "D": self.dimension,
            "Z": self.num_levels,
            "users": {str(int(u)): self.user_matrix[r].tolist()
                      for r, u in enumerate(self.user_ids)},
            "items": {str(int(i)): self.item_matrix[r].tolist()
                      for r, i in enumerate(self.item_ids)},
        }

    def save(self, path):
        # json emits shortest-roundtrip decimal for floats, so a
        # save/load cycle reproduces every coefficient bit-exactly.
        Path(path).write_text(
            json.dumps(self.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def from_json_dict(cls, doc):
        version = doc.get("version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version!r}")
        users = {int(k): v for k, v in doc["users"].items()}
        items = {int(k): v for k, v in doc["items"].items()}
        return cls(doc["D"], doc["Z"], doc["mode"], users, items)

    @classmethod
    def load(cls, path):
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __repr__(self):
        return (f"NnmModel(mode={self.mode!r}, D={self.dimension}, "
                f"Z={self.num_levels}, users={self.n_users}, items={self.n_items})")


def star_rating(score, num_levels):
    """Map a like-score in [0, 1] to the 1..Z star scale: clamp(Z * s, 1, Z)."""
    return float(min(max(num_levels * score, 1.0), float(num_levels)))
