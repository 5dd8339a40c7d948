"""Stereotype characterization and tag-hierarchy extraction.

A stereotype is one of the D basis preferences; a user vector is a
mixture of them.  Tags (e.g. movie genres) are summarized by the mean
like-vector of their items, which doubles as the probability that each
stereotype likes a random item of that tag.  Relaxed support
containment between tag vectors induces a directed hierarchy graph.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .model import UnknownIdError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TagVector:
    """Mean like-vector over one tag's items."""

    name: str
    entries: np.ndarray


def tag_vector(model, item_ids, name=""):
    """Componentwise mean of the like-vectors of ``item_ids``."""
    if model.mode != "binary":
        raise ValueError("tag vectors are defined on binary models")
    item_ids = list(item_ids)
    if not item_ids:
        raise ValueError(f"tag {name!r} has no items")
    rows = []
    for iid in item_ids:
        if int(iid) not in model.item_row:
            raise UnknownIdError(f"unknown item id {iid}")
        rows.append(model.item_row[int(iid)])
    return TagVector(name, model.item_matrix[rows].mean(axis=0))


def modeled_tag_vectors(model, tag_index):
    """Tag vectors for every tag with at least one modeled item.

    Tags whose items are all absent from the model are skipped with a
    warning; item ids outside the model are ignored per tag.
    """
    vectors = []
    for tag in tag_index.tags:
        present = [i for i in tag_index.items(tag) if int(i) in model.item_row]
        if not present:
            log.warning("tag %r has no items in the model; skipped", tag)
            continue
        vectors.append(tag_vector(model, present, name=tag))
    return vectors


@dataclass(frozen=True)
class StereotypeProfile:
    """Affinity matrix E[tag, stereotype] plus the >= 1/2 like-guesses."""

    tags: tuple
    matrix: np.ndarray   # (T, D)
    guesses: np.ndarray  # (T, D) bool; ties at exactly 1/2 count as "like"

    @property
    def dimension(self):
        return self.matrix.shape[1]

    def csv_rows(self):
        """Rows (tag, omega, value, guess) with omega in 1..D."""
        rows = []
        for t, tag in enumerate(self.tags):
            for w in range(self.dimension):
                rows.append((tag, w + 1, float(self.matrix[t, w]),
                             "like" if self.guesses[t, w] else "dislike"))
        return rows


def stereotype_profiles(model, tag_index):
    """Per-tag affinity of every stereotype, with the guessing rule applied."""
    vectors = modeled_tag_vectors(model, tag_index)
    if not vectors:
        raise ValueError("no tag has items in the model")
    matrix = np.stack([v.entries for v in vectors])
    return StereotypeProfile(
        tags=tuple(v.name for v in vectors),
        matrix=matrix,
        guesses=matrix >= 0.5,
    )


def stereotype_item_lists(model, dataset, omega, like_threshold=0.9, top_j=10):
    """Items a stereotype likes, by popularity.

    ``omega`` is 1-based.  Keeps items whose like-vector component at
    omega reaches ``like_threshold``, ranks them by training rating
    count descending (ties by item id ascending) and returns the top_j
    item ids.
    """
    if not 1 <= omega <= model.dimension:
        raise ValueError(f"stereotype index {omega} outside 1..{model.dimension}")
    component = model.item_matrix[:, omega - 1]
    qualifying = model.item_ids[component >= like_threshold]
    counts = [dataset.item_counts[dataset.item_index[int(i)]]
              if int(i) in dataset.item_index else 0
              for i in qualifying]
    ranked = sorted(zip(qualifying.tolist(), counts), key=lambda t: (-t[1], t[0]))
    return [iid for iid, _ in ranked[:top_j]]


@dataclass(frozen=True)
class HierarchyGraph:
    """Directed graph of relaxed-containment relations between tags.

    Edge (t -> t') is present exactly when t' is epsilon-contained in
    t.  Zero-norm tag vectors pass every containment test; they are
    kept but flagged.
    """

    vertices: tuple
    edges: tuple
    epsilon: float
    zero_norm_tags: frozenset


def hierarchy_edges(tag_vectors, epsilon):
    """Evaluate the pairwise containment tests at a given epsilon.

    Tag t' is epsilon-contained in t when
    ``dot(E_t, E_t') >= (1 - epsilon) * l1norm(E_t')``; each passing
    ordered pair (t, t'), t != t', contributes the edge t -> t'.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    vectors = list(tag_vectors)
    if not vectors:
        raise ValueError("need at least one tag vector")
    names = [v.name for v in vectors]
    if len(set(names)) != len(names):
        raise ValueError("tag names must be unique")
    matrix = np.stack([np.asarray(v.entries, dtype=float) for v in vectors])

    dots = matrix @ matrix.T
    norms = np.abs(matrix).sum(axis=1)
    contained = dots >= (1.0 - epsilon) * norms[None, :]

    edges = []
    for s, src in enumerate(names):
        for t, dst in enumerate(names):
            if s != t and contained[s, t]:
                edges.append((src, dst))
    return HierarchyGraph(
        vertices=tuple(sorted(names)),
        edges=tuple(sorted(edges)),
        epsilon=float(epsilon),
        zero_norm_tags=frozenset(n for n, v in zip(names, norms) if v == 0.0),
    )


def _reduced_edges(vertices, edges):
    """Drop edges implied by longer paths, preserving mutual-containment cycles.

    Strongly connected components are condensed first (classic
    transitive reduction is defined on DAGs); within a component all
    edges survive, and each reduced condensation edge keeps its
    lexicographically smallest witness.
    """
    import networkx as nx

    graph = nx.DiGraph()
    graph.add_nodes_from(vertices)
    graph.add_edges_from(edges)
    condensed = nx.condensation(graph)
    component_of = condensed.graph["mapping"]
    reduced = nx.transitive_reduction(condensed)

    kept = [(a, b) for a, b in edges if component_of[a] == component_of[b]]
    for ca, cb in reduced.edges:
        witnesses = sorted((a, b) for a, b in edges
                           if component_of[a] == ca and component_of[b] == cb)
        kept.append(witnesses[0])
    return sorted(set(kept))


def _dot_quote(name):
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph, exclude_tags=(), transitive_reduction=False):
    """Render a hierarchy graph as DOT text.

    Excluded tags are removed together with their incident edges.
    Zero-norm tags are drawn dashed.  With ``transitive_reduction``
    the displayed edge set is thinned to its path-implied minimum.
    """
    excluded = set(exclude_tags)
    vertices = [v for v in graph.vertices if v not in excluded]
    edges = [(a, b) for a, b in graph.edges if a not in excluded and b not in excluded]
    if transitive_reduction:
        edges = _reduced_edges(vertices, edges)

    lines = ["digraph tag_hierarchy {"]
    for v in vertices:
        attr = " [style=dashed]" if v in graph.zero_norm_tags else ""
        lines.append(f"  {_dot_quote(v)}{attr};")
    for a, b in sorted(edges):
        lines.append(f"  {_dot_quote(a)} -> {_dot_quote(b)};")
    lines.append("}")
    return "\n".join(lines) + "\n"
