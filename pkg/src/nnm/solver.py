"""Alternating constrained least squares for normalized nonnegative models.

The fitting loop alternates between all per-item and all per-user
subproblems.  Each subproblem is a tiny constrained least squares
    min_x ||A x - b||^2   s.t.  x in simplex / box / bundle set
solved by projected gradient descent with Armijo backtracking on the
Gram form (G, h) = (A^T A, A^T b).  All subproblems of one half-step
are solved as a single batched iteration, which is what makes the
dense zero-fill preprocessing cheap: its Gram matrix is shared by
every row (P^T P for items, E^T E for users).
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ATOL, NnmModel, UnknownIdError, _lookup_rows

log = logging.getLogger(__name__)

KKT_TOL = 1e-6          # projected-gradient residual at convergence
_ARMIJO_C = 1e-4
_MAX_HALVINGS = 60      # step underflows long before this

# Dense zero-fill is the default preprocessing up to this many matrix
# entries; beyond it, negative sampling with k=1 scales better.
DENSE_FILL_LIMIT = 10_000_000


class DegenerateProblemError(ValueError):
    """A least-squares subproblem with no design rows."""


@dataclass(frozen=True)
class FitConfig:
    """Knobs of the alternating fit.

    ``preprocessing`` chooses how unknown entries are zero-filled during
    the first ``preprocessing_iters`` iterations: ``"dense"`` treats the
    whole rating matrix as known, ``"sample"`` draws
    ``negatives_per_rating`` unknown pairs per observed rating instead.
    """

    dimension: int
    max_outer_iters: int = 16
    preprocessing_iters: int = 2
    preprocessing: str = "dense"
    negatives_per_rating: int = 1
    inner_tol: float = 1e-8
    inner_max_iters: int = 500
    rng_seed: int = 0
    mode: str = "binary"

    def validated(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dimension}")
        if not self.max_outer_iters >= self.preprocessing_iters >= 0:
            raise ValueError(
                f"need max_outer_iters >= preprocessing_iters >= 0, got "
                f"{self.max_outer_iters} and {self.preprocessing_iters}")
        if self.preprocessing not in ("dense", "sample"):
            raise ValueError(f"unknown preprocessing {self.preprocessing!r}")
        if self.negatives_per_rating < 0:
            raise ValueError("negatives_per_rating must be >= 0")
        if self.mode not in ("binary", "categorical"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.inner_max_iters < 1 or self.inner_tol < 0:
            raise ValueError("bad inner-solver settings")
        return self


def default_preprocessing(n_users, n_items):
    """Dense zero-fill for small matrices, negative sampling beyond."""
    return "dense" if n_users * n_items <= DENSE_FILL_LIMIT else "sample"


@dataclass(frozen=True)
class SubproblemLS:
    """One constrained least-squares subproblem in design-row form."""

    coefficients: np.ndarray    # (n_rows, D)
    targets: np.ndarray         # (n_rows,)
    constraint: str             # "simplex" | "box"

    @classmethod
    def from_rows(cls, rows, constraint):
        rows = list(rows)
        if not rows:
            raise DegenerateProblemError("subproblem has no design rows")
        coefficients = np.array([np.asarray(a, dtype=float) for a, _ in rows])
        targets = np.array([float(t) for _, t in rows])
        if not np.all(np.isfinite(coefficients)) or not np.all(np.isfinite(targets)):
            raise ValueError("subproblem rows must be finite")
        return cls(coefficients, targets, constraint)


# -- projections ------------------------------------------------------

def _project_rows_simplex(v):
    """Euclidean projection of each row onto the probability simplex."""
    u = np.sort(v, axis=-1)[..., ::-1]
    css = np.cumsum(u, axis=-1)
    j = np.arange(1, v.shape[-1] + 1, dtype=float)
    rho = np.count_nonzero(u + (1.0 - css) / j > 0.0, axis=-1)
    theta = (np.take_along_axis(css, rho[..., None] - 1, -1)[..., 0] - 1.0) / rho
    return np.maximum(v - theta[..., None], 0.0)


def _project_box(v):
    return np.clip(v, 0.0, 1.0)


def _project_bundle(b):
    # Bundle feasibility = each component's outcome row on the simplex.
    n, d, z = b.shape
    return _project_rows_simplex(b.reshape(n * d, z)).reshape(n, d, z)


def project_simplex(v):
    """Nearest point of the probability simplex to ``v`` (Euclidean)."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite vector")
    return _project_rows_simplex(v[None])[0]


# -- batched projected gradient ---------------------------------------

def _pgd(gram, lin, x0, project, rel_tol, max_iters, kkt_tol=KKT_TOL):
    """Minimize x^T G x - 2 h^T x over a convex set, one row at a time.

    ``x0`` has shape (n, D) or (n, D, Z); ``gram`` is (n, D, D) and
    ``lin`` matches ``x0``.  Backtracking halves an initial step of
    1 / ||G||_inf per row until the Armijo condition holds, so the
    objective never increases from the warm start.  A row retires when
    its unit-step projected-gradient residual reaches ``kkt_tol`` or
    its relative objective decrease falls below ``rel_tol``.
    """
    x = np.array(x0, dtype=float)
    value_axes = tuple(range(1, x.ndim))

    if x.ndim == 2:
        matvec = lambda g, v: np.einsum("nde,ne->nd", g, v)
    else:
        matvec = lambda g, v: np.einsum("nde,nez->ndz", g, v)

    def value(g, h, v):
        return (v * matvec(g, v)).sum(axis=value_axes) - 2.0 * (h * v).sum(axis=value_axes)

    def colvec(a, ndim):
        return a.reshape(a.shape[0:1] + (1,) * (ndim - 1))

    alpha0 = 1.0 / np.maximum(np.abs(gram).sum(axis=2).max(axis=1), 1e-30)
    f = value(gram, lin, x)
    live = np.arange(x.shape[0])

    for _ in range(max_iters):
        g_l, h_l, x_l = gram[live], lin[live], x[live]
        grad = 2.0 * (matvec(g_l, x_l) - h_l)
        residual = x_l - project(x_l - grad)
        kkt = np.abs(residual).reshape(live.size, -1).max(axis=1)
        keep = kkt > kkt_tol
        live = live[keep]
        if live.size == 0:
            break
        g_l, h_l, x_l, grad = g_l[keep], h_l[keep], x_l[keep], grad[keep]
        f_l = f[live]

        alpha = alpha0[live].copy()
        x_new, f_new = x_l.copy(), f_l.copy()
        pending = np.arange(live.size)
        for _ in range(_MAX_HALVINGS):
            cand = project(x_l[pending] - colvec(alpha[pending], x.ndim) * grad[pending])
            f_cand = value(g_l[pending], h_l[pending], cand)
            step = cand - x_l[pending]
            slope = (grad[pending] * step).reshape(pending.size, -1).sum(axis=1)
            ok = f_cand <= f_l[pending] + _ARMIJO_C * slope
            hit = pending[ok]
            x_new[hit], f_new[hit] = cand[ok], f_cand[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            alpha[pending] *= 0.5

        rel = (f_l - f_new) / np.maximum(np.abs(f_l), 1e-30)
        x[live], f[live] = x_new, f_new
        live = live[rel >= rel_tol]
        if live.size == 0:
            break
    return x


def _solve_batch(problem, warm_start, constraint, rel_tol, max_iters, kkt_tol):
    a, b = problem.coefficients, problem.targets
    gram = (a.T @ a)[None]
    lin = (a.T @ b)[None]
    x0 = np.asarray(warm_start, dtype=float)[None]
    if x0.shape[1] != a.shape[1]:
        raise ValueError(
            f"warm start has length {x0.shape[1]}, rows have length {a.shape[1]}")
    project = _project_rows_simplex if constraint == "simplex" else _project_box
    return _pgd(gram, lin, x0, project, rel_tol, max_iters, kkt_tol=kkt_tol)[0]


def solve_simplex_ls(problem, warm_start, rel_tol=1e-8, max_iters=500,
                     kkt_tol=KKT_TOL):
    """Least squares over the probability simplex, warm-started.

    The result is feasible and its objective never exceeds the warm
    start's; at convergence the projected-gradient residual is below
    ``kkt_tol``.
    """
    if problem.constraint != "simplex":
        raise ValueError(f"expected a simplex subproblem, got {problem.constraint!r}")
    return _solve_batch(problem, warm_start, "simplex", rel_tol, max_iters, kkt_tol)


def solve_box_ls(problem, warm_start, rel_tol=1e-8, max_iters=500,
                 kkt_tol=KKT_TOL):
    """Least squares over the box [0, 1]^D, warm-started."""
    if problem.constraint != "box":
        raise ValueError(f"expected a box subproblem, got {problem.constraint!r}")
    return _solve_batch(problem, warm_start, "box", rel_tol, max_iters, kkt_tol)


def ls_objective(problem, x):
    """Residual sum of squares of a subproblem at point ``x``."""
    r = problem.coefficients @ np.asarray(x, dtype=float) - problem.targets
    return float(r @ r)


# -- objective over a rating index set --------------------------------

def objective(model, dataset, gamma=None):
    """Squared-error objective sum_(u,i) (prediction - R_ui / Z)^2.

    ``gamma`` is an iterable of (user, item) pairs; by default the
    dataset's full observed set.  In categorical mode the target is the
    one-hot outcome vector of the observed rating.
    """
    z = model.num_levels
    if gamma is None:
        u_rows = _lookup_rows(model.user_ids, dataset.user_ids)
        i_rows = _lookup_rows(model.item_ids, dataset.item_ids)
        stars = dataset.ratings
    else:
        pairs = list(gamma)
        if not pairs:
            return 0.0
        lookup = {(int(u), int(i)): int(r)
                  for u, i, r in zip(dataset.user_ids, dataset.item_ids, dataset.ratings)}
        try:
            stars = np.array([lookup[(int(u), int(i))] for u, i in pairs])
        except KeyError as e:
            raise UnknownIdError(f"pair {e} not in dataset") from None
        u_rows = _lookup_rows(model.user_ids, [u for u, _ in pairs])
        i_rows = _lookup_rows(model.item_ids, [i for _, i in pairs])

    p = model.user_matrix[u_rows]
    if model.mode == "binary":
        pred = (p * model.item_matrix[i_rows]).sum(axis=1)
        return float(((pred - stars / z) ** 2).sum())
    pred = np.einsum("md,mdz->mz", p, model.item_matrix[i_rows])
    onehot = np.zeros_like(pred)
    onehot[np.arange(stars.size), stars - 1] = 1.0
    return float(((pred - onehot) ** 2).sum())


# -- negative sampling -------------------------------------------------

def sample_negatives(dataset, k, rng_seed):
    """Sample unknown (user, item) pairs, k per observed rating.

    Per user, k times the user's rating count is drawn uniformly
    without replacement from that user's unrated items; a pool smaller
    than the request is taken whole.  Returns an (m, 2) id array
    disjoint from the observed set.
    """
    if k < 0:
        raise ValueError(f"negatives per rating must be >= 0, got {k}")
    rng = np.random.default_rng(rng_seed)
    out_users, out_items = [], []
    if k > 0:
        order = np.argsort(dataset.user_rows, kind="stable")
        bounds = np.searchsorted(dataset.user_rows[order], np.arange(dataset.n_users + 1))
        all_rows = np.arange(dataset.n_items)
        for u in range(dataset.n_users):
            rated = dataset.item_rows[order[bounds[u]:bounds[u + 1]]]
            pool = np.setdiff1d(all_rows, rated, assume_unique=False)
            take = min(k * (bounds[u + 1] - bounds[u]), pool.size)
            if take == 0:
                continue
            chosen = rng.choice(pool, size=take, replace=False)
            out_users.append(np.full(take, u))
            out_items.append(np.sort(chosen))
    if not out_users:
        return np.empty((0, 2), dtype=np.int64)
    u_rows = np.concatenate(out_users)
    i_rows = np.concatenate(out_items)
    return np.column_stack((dataset.unique_users[u_rows], dataset.unique_items[i_rows]))


# -- fit report --------------------------------------------------------

@dataclass(frozen=True)
class HalfStepRecord:
    iteration: int          # 1-based outer iteration
    phase: str              # "item" | "user"
    phase_objective: float  # objective on the index set being optimized
    gamma_objective: float  # objective on the true observed set
    wall_ms: float


@dataclass
class FitReport:
    """Per-half-step trace of one fit."""

    records: list = field(default_factory=list)

    @property
    def gamma_trace(self):
        return [r.gamma_objective for r in self.records]

    @property
    def phase_trace(self):
        return [r.phase_objective for r in self.records]

    def iteration_records(self, phase):
        return [r for r in self.records if r.phase == phase]

    def write_csv(self, path):
        lines = ["iter,phase,objective,wall_ms"]
        for r in self.records:
            lines.append(f"{r.iteration},{r.phase},{r.gamma_objective!r},{r.wall_ms:.3f}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


# -- assembly helpers ---------------------------------------------------

def _segment_gram(coef, groups, n_groups):
    """G[g] = sum of outer products of the coefficient rows in group g."""
    d = coef.shape[1]
    gram = np.empty((n_groups, d, d))
    for a in range(d):
        wa = coef[:, a]
        for b in range(a, d):
            v = np.bincount(groups, weights=wa * coef[:, b], minlength=n_groups)
            gram[:, a, b] = v
            gram[:, b, a] = v
    return gram


def _segment_linear(coef, groups, targets, n_groups):
    d = coef.shape[1]
    lin = np.empty((n_groups, d))
    for a in range(d):
        lin[:, a] = np.bincount(groups, weights=coef[:, a] * targets, minlength=n_groups)
    return lin


def _segment_linear_onehot(coef, groups, outcome0, n_groups, n_levels):
    """lin[g, :, z] = sum of coefficient rows whose observed outcome is z+1."""
    d = coef.shape[1]
    keys = groups * n_levels + outcome0
    lin = np.empty((n_groups, d, n_levels))
    for a in range(d):
        lin[:, a, :] = np.bincount(
            keys, weights=coef[:, a], minlength=n_groups * n_levels
        ).reshape(n_groups, n_levels)
    return lin


class _FitState:
    """Mutable working state of one alternating fit."""

    def __init__(self, dataset, config):
        self.dataset = dataset
        self.config = config
        self.z = dataset.z
        self.binary = config.mode == "binary"
        d = config.dimension
        seeds = np.random.SeedSequence(config.rng_seed).generate_state(2)
        rng = np.random.default_rng(int(seeds[0]))

        # Step one of the loop: every user starts at a random stereotype.
        picks = rng.integers(0, d, size=dataset.n_users)
        self.users = np.zeros((dataset.n_users, d))
        self.users[np.arange(dataset.n_users), picks] = 1.0
        # Item vectors are defined by the first item half-step; the warm
        # start below is the neutral center of the feasible set.
        if self.binary:
            self.items = np.full((dataset.n_items, d), 0.5)
        else:
            self.items = np.full((dataset.n_items, d, self.z), 1.0 / self.z)

        self.targets = dataset.ratings / self.z          # binary-mode targets
        self.outcome0 = dataset.ratings - 1              # categorical outcome index
        self.neg_u = self.neg_i = None
        if config.preprocessing == "sample" and config.preprocessing_iters > 0:
            pairs = sample_negatives(dataset, config.negatives_per_rating, int(seeds[1]))
            if pairs.size:
                self.neg_u = _lookup_rows(dataset.unique_users, pairs[:, 0])
                self.neg_i = _lookup_rows(dataset.unique_items, pairs[:, 1])

    def has_negatives(self):
        return self.neg_u is not None

    # predictions on the observed pairs
    def _pred_gamma(self):
        p = self.users[self.dataset.user_rows]
        if self.binary:
            return (p * self.items[self.dataset.item_rows]).sum(axis=1)
        return np.einsum("md,mdz->mz", p, self.items[self.dataset.item_rows])

    def gamma_objective(self):
        pred = self._pred_gamma()
        if self.binary:
            return float(((pred - self.targets) ** 2).sum())
        pred[np.arange(self.outcome0.size), self.outcome0] -= 1.0
        return float((pred ** 2).sum())

    def augmented_objective(self):
        """Phase objective during zero-fill preprocessing."""
        if self.config.preprocessing == "dense":
            # sum over ALL pairs of prediction^2, corrected on the
            # observed set; tractable via the shared Gram E^T E.
            if self.binary:
                quad = float(np.einsum("ud,de,ue->", self.users,
                                       self.items.T @ self.items, self.users))
                pred = self._pred_gamma()
                return quad - 2.0 * float((pred * self.targets).sum()) \
                    + float((self.targets ** 2).sum())
            quad = 0.0
            for z in range(self.z):
                m = self.items[:, :, z]
                quad += float(np.einsum("ud,de,ue->", self.users, m.T @ m, self.users))
            pred = np.einsum("md,mdz->mz", self.users[self.dataset.user_rows],
                             self.items[self.dataset.item_rows])
            hit = pred[np.arange(self.outcome0.size), self.outcome0]
            return quad - 2.0 * float(hit.sum()) + float(self.outcome0.size)
        obj = self.gamma_objective()
        if self.has_negatives():
            p = self.users[self.neg_u]
            if self.binary:
                pred = (p * self.items[self.neg_i]).sum(axis=1)
            else:
                pred = np.einsum("md,mdz->mz", p, self.items[self.neg_i])
            obj += float((pred ** 2).sum())
        return obj

    def phase_objective(self, augmented):
        return self.augmented_objective() if augmented else self.gamma_objective()

    # one half-step: rebuild (G, h) and run the batched subsolver
    def half_step(self, phase, augmented):
        ds, cfg = self.dataset, self.config
        if phase == "item":
            coef_all, groups, n_groups = self.users, ds.item_rows, ds.n_items
            pair_coef = self.users[ds.user_rows]
            neg_coef = self.users[self.neg_u] if self.has_negatives() else None
            neg_groups = self.neg_i if self.has_negatives() else None
        else:
            groups, n_groups = ds.user_rows, ds.n_users
            pair_coef = None  # set per mode below
            neg_groups = self.neg_u if self.has_negatives() else None

        if self.binary:
            if phase == "item":
                current, project = self.items, _project_box
            else:
                coef_all = self.items
                pair_coef = self.items[ds.item_rows]
                neg_coef = self.items[self.neg_i] if self.has_negatives() else None
                current, project = self.users, _project_rows_simplex
            gram, lin = self._assemble_binary(
                coef_all, pair_coef, groups, n_groups, augmented, neg_coef, neg_groups)
        else:
            if phase == "item":
                current, project = self.items, _project_bundle
                gram, lin = self._assemble_cat_items(
                    coef_all, pair_coef, groups, n_groups, augmented, neg_coef, neg_groups)
            else:
                current, project = self.users, _project_rows_simplex
                gram, lin = self._assemble_cat_users(n_groups, augmented, neg_groups)

        solved = _pgd(gram, lin, current, project, cfg.inner_tol, cfg.inner_max_iters)
        if phase == "item":
            self.items = solved
        else:
            self.users = solved

    def _assemble_binary(self, coef_all, pair_coef, groups, n_groups,
                         augmented, neg_coef, neg_groups):
        lin = _segment_linear(pair_coef, groups, self.targets, n_groups)
        if augmented and self.config.preprocessing == "dense":
            gram = np.broadcast_to(coef_all.T @ coef_all,
                                   (n_groups,) + (coef_all.shape[1],) * 2)
        elif augmented and self.has_negatives():
            ext_coef = np.concatenate([pair_coef, neg_coef])
            ext_groups = np.concatenate([groups, neg_groups])
            gram = _segment_gram(ext_coef, ext_groups, n_groups)
        else:
            gram = _segment_gram(pair_coef, groups, n_groups)
        return gram, lin

    def _assemble_cat_items(self, coef_all, pair_coef, groups, n_groups,
                            augmented, neg_coef, neg_groups):
        lin = _segment_linear_onehot(pair_coef, groups, self.outcome0, n_groups, self.z)
        # Negative samples carry the all-zero outcome vector (rating 0 is
        # outside [Z]), so they touch the Gram only.
        if augmented and self.config.preprocessing == "dense":
            gram = np.broadcast_to(coef_all.T @ coef_all,
                                   (n_groups,) + (coef_all.shape[1],) * 2)
        elif augmented and self.has_negatives():
            ext_coef = np.concatenate([pair_coef, neg_coef])
            ext_groups = np.concatenate([groups, neg_groups])
            gram = _segment_gram(ext_coef, ext_groups, n_groups)
        else:
            gram = _segment_gram(pair_coef, groups, n_groups)
        return gram, lin

    def _assemble_cat_users(self, n_groups, augmented, neg_groups):
        ds = self.dataset
        d = self.config.dimension
        # Per-item Gram contribution sum_z E_iz E_iz^T, shared by raters.
        item_gram = np.einsum("idz,iez->ide", self.items, self.items)
        if augmented and self.config.preprocessing == "dense":
            gram = np.broadcast_to(item_gram.sum(axis=0), (n_groups, d, d))
        else:
            rows = ds.item_rows
            groups = ds.user_rows
            if augmented and self.has_negatives():
                rows = np.concatenate([rows, self.neg_i])
                groups = np.concatenate([groups, neg_groups])
            gram = np.empty((n_groups, d, d))
            for a in range(d):
                for b in range(a, d):
                    v = np.bincount(groups, weights=item_gram[rows, a, b],
                                    minlength=n_groups)
                    gram[:, a, b] = v
                    gram[:, b, a] = v
        # h_u = sum over rated items of the observed outcome's column.
        hit_cols = self.items[ds.item_rows, :, self.outcome0]
        lin = _segment_linear(hit_cols, ds.user_rows, np.ones(ds.n_ratings), n_groups)
        return gram, lin

    def snapshot(self):
        return NnmModel.from_arrays(
            self.config.dimension, self.z, self.config.mode,
            self.dataset.unique_users, self.users.copy(),
            self.dataset.unique_items, self.items.copy(),
        )


def fit(dataset, config, iteration_callback=None):
    """Run the alternating fit and return ``(model, report)``.

    Every outer iteration solves all item subproblems, then all user
    subproblems; during the first ``preprocessing_iters`` iterations the
    objective ranges over the zero-filled augmented index set.  The
    report records, per half-step, both the phase objective (the
    quantity the solver is contracted to not increase) and the
    objective restricted to the truly observed pairs.

    ``iteration_callback(iteration, model)``, when given, receives a
    model snapshot after each outer iteration.
    """
    config = config.validated()
    if dataset.n_ratings == 0:
        raise ValueError("cannot fit an empty dataset")
    orphans = [f"user {int(u)}" for u in dataset.unique_users[dataset.user_counts == 0]]
    orphans += [f"item {int(i)}" for i in dataset.unique_items[dataset.item_counts == 0]]
    if orphans:
        raise ValueError("entities without training ratings: " + ", ".join(orphans))

    state = _FitState(dataset, config)
    report = FitReport()
    for iteration in range(1, config.max_outer_iters + 1):
        augmented = iteration <= config.preprocessing_iters
        for phase in ("item", "user"):
            t0 = time.perf_counter()
            state.half_step(phase, augmented)
            wall_ms = (time.perf_counter() - t0) * 1e3
            record = HalfStepRecord(
                iteration, phase,
                state.phase_objective(augmented),
                state.gamma_objective(),
                wall_ms,
            )
            report.records.append(record)
            log.debug("iter %d %s: phase %.6f gamma %.6f (%.1f ms)",
                      iteration, phase, record.phase_objective,
                      record.gamma_objective, wall_ms)
        if iteration_callback is not None:
            iteration_callback(iteration, state.snapshot())

    model = state.snapshot()
    problems = model.validate()
    if problems:
        raise RuntimeError(f"fit produced an infeasible model: {problems[0]}")
    return model, report
