"""Anchor selection and online fold-in of new users and items.

The two-phase scheme fits a model offline on high-activity "anchor"
users and items; everyone else is represented afterwards by solving a
single small convex subproblem against the frozen model.  Fold-in
never mutates the model, so any number of fold-ins may run at once.
"""

from dataclasses import dataclass

import numpy as np

from .solver import SubproblemLS, solve_box_ls, solve_simplex_ls


@dataclass(frozen=True)
class AnchorSet:
    """High-activity users and items chosen for the offline fit."""

    user_ids: tuple
    item_ids: tuple

    def __post_init__(self):
        if not self.user_ids or not self.item_ids:
            raise ValueError("anchor sets must be nonempty")


def select_anchors(dataset, n_users, n_items):
    """Top-n users and items by rating count; ties break by id ascending."""
    if not 1 <= n_users <= dataset.n_users:
        raise ValueError(f"n_users must lie in 1..{dataset.n_users}, got {n_users}")
    if not 1 <= n_items <= dataset.n_items:
        raise ValueError(f"n_items must lie in 1..{dataset.n_items}, got {n_items}")

    def top(ids, counts, n):
        order = np.lexsort((ids, -counts))
        return tuple(int(i) for i in ids[order[:n]])

    return AnchorSet(
        user_ids=top(dataset.unique_users, dataset.user_counts, n_users),
        item_ids=top(dataset.unique_items, dataset.item_counts, n_items),
    )


def _usable(model, ratings, known_ids, side):
    rows = []
    for entity_id, stars in ratings:
        if int(entity_id) not in known_ids:
            continue
        if not 1 <= stars <= model.num_levels:
            raise ValueError(f"rating {stars} outside [1, {model.num_levels}]")
        rows.append((int(entity_id), float(stars)))
    if not rows:
        raise ValueError(f"no usable ratings: no rated {side} is present in the model")
    return rows


# A fold-in is one tiny solve on the request path, so it can afford a
# much tighter stop than the batched training half-steps.
_FOLD_IN_KKT = 1e-9
_FOLD_IN_REL = 1e-14
_FOLD_IN_ITERS = 2000


def fold_in_user(model, ratings):
    """Simplex vector for a new user from (item_id, stars) pairs.

    Solves the user half-step subproblem with item vectors fixed,
    warm-started from the uniform mixture.  Components the data says
    nothing about keep their warm-start value; they are priors, not
    inferences.  Ratings on unknown items are ignored.
    """
    if model.mode != "binary":
        raise ValueError("fold-in operates on binary models")
    usable = _usable(model, ratings, model.item_row, "item")
    problem = SubproblemLS.from_rows(
        [(model.item_vector(iid), stars / model.num_levels) for iid, stars in usable],
        constraint="simplex",
    )
    warm = np.full(model.dimension, 1.0 / model.dimension)
    return solve_simplex_ls(problem, warm, rel_tol=_FOLD_IN_REL,
                            max_iters=_FOLD_IN_ITERS, kkt_tol=_FOLD_IN_KKT)


def fold_in_item(model, ratings):
    """Like-vector for a new item from (user_id, stars) pairs.

    Mirror of :func:`fold_in_user` with user vectors fixed, solved over
    the box [0, 1]^D from the all-0.5 warm start.
    """
    if model.mode != "binary":
        raise ValueError("fold-in operates on binary models")
    usable = _usable(model, ratings, model.user_row, "user")
    problem = SubproblemLS.from_rows(
        [(model.user_vector(uid), stars / model.num_levels) for uid, stars in usable],
        constraint="box",
    )
    warm = np.full(model.dimension, 0.5)
    return solve_box_ls(problem, warm, rel_tol=_FOLD_IN_REL,
                        max_iters=_FOLD_IN_ITERS, kkt_tol=_FOLD_IN_KKT)
