"""Triangulated maximally filtered graphs and their clique forests.

The builder grows a maximal planar chordal graph by greedy tetrahedron
insertion: a seed 4-clique, then one vertex at a time placed into the
triangular face where its three connecting edges gain the most weight.
The result always has 3p-6 edges, p-3 tetrahedral cliques and p-4
triangular separators forming a clique tree.

Determinism: equal gains are resolved toward the lowest vertex index,
then the lexicographically smallest face.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .data_ingest import ReturnsMatrix, SectorMap
from .errors import DataError, NumericalError, ValidationError

GAIN_KINDS = ("raw", "absolute", "squared")
CENTRALITY_KINDS = ("degree", "eigenvector", "betweenness")

# Exhaustive max-weight seed search is quartic in p; beyond this the
# usual truncated-strength heuristic picks the seed.
_EXACT_SEED_LIMIT = 50

_POWER_TOL = 1e-10
_POWER_MAX_STEPS = 10_000


@dataclass
class SimilarityMatrix:
    """Symmetric correlation-like matrix with unit diagonal."""

    values: np.ndarray
    labels: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        p = self.values.shape[0]
        if self.values.shape != (p, p):
            raise ValidationError("similarity matrix must be square")
        if len(self.labels) != p:
            raise ValidationError("similarity labels inconsistent with matrix")
        if not np.all(np.isfinite(self.values)):
            raise DataError("similarity matrix contains non-finite entries")
        if np.max(np.abs(self.values - self.values.T)) > 1e-12:
            raise DataError("similarity matrix is not symmetric")
        if p and not np.all(np.diag(self.values) == 1.0):
            raise DataError("similarity matrix diagonal must be exactly 1")
        if np.max(np.abs(self.values)) > 1.0:
            raise DataError("similarity entries must lie in [-1, 1]")

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass
class FilteringNetwork:
    """TMFG adjacency plus the insertion history that generated it."""

    p: int
    labels: list[str]
    edges: list[tuple[int, int]]
    seed: tuple[int, int, int, int]
    insertions: list[tuple[int, tuple[int, int, int]]]  # (new node, host face)
    retained_weight: float
    gain: str

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.p, self.p))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges)

    def to_graph(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(self.p))
        G.add_edges_from(self.edges)
        return G

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.p, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


@dataclass
class CliqueTree:
    """Tetrahedral cliques joined through triangular separators."""

    cliques: list[tuple[int, int, int, int]]
    separators: list[tuple[int, int, int]]
    edges: list[tuple[int, int, int]]  # (clique a, clique b, separator index)

    @property
    def p(self) -> int:
        return len(self.cliques) + 3


@dataclass
class CentralityVector:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in CENTRALITY_KINDS:
            raise ValidationError(f"unknown centrality kind {self.kind!r}")
        if np.any(self.values < 0):
            raise NumericalError("centrality scores must be nonnegative")


@dataclass
class SectorStats:
    size: int
    internal_fraction: float
    mean_centrality: float
    log_mean_centrality: float
    node_indices: list[int]


@dataclass
class SectorLinkStats:
    per_sector: dict[str, SectorStats]
    centrality_kind: str
    warnings: list[str] = field(default_factory=list)


def correlation_matrix(returns: ReturnsMatrix) -> SimilarityMatrix:
    """Pearson correlations of the (standardized) return columns."""
    if not returns.standardized:
        raise ValidationError("correlation_matrix expects standardized returns")
    X = returns.values
    if X.shape[0] < 2:
        raise ValidationError("need at least two observations for correlations")
    if not np.all(np.isfinite(X)):
        raise DataError("returns contain non-finite values")
    C = np.corrcoef(X, rowvar=False)
    C = 0.5 * (C + C.T)
    C = np.clip(C, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return SimilarityMatrix(values=C, labels=list(returns.tickers))


def _gain_weights(sim: SimilarityMatrix, gain: str) -> np.ndarray:
    if gain not in GAIN_KINDS:
        raise ValidationError(f"gain must be one of {GAIN_KINDS}, got {gain!r}")
    W = sim.values.copy()
    if gain == "absolute":
        W = np.abs(W)
    elif gain == "squared":
        W = W**2
    np.fill_diagonal(W, 0.0)
    return W


def _exact_seed(W: np.ndarray) -> tuple[int, ...]:
    """Max total-weight 4-clique by enumeration (small p only)."""
    p = W.shape[0]
    combos = np.array(list(itertools.combinations(range(p), 4)))
    a, b, c, d = combos[:, 0], combos[:, 1], combos[:, 2], combos[:, 3]
    totals = W[a, b] + W[a, c] + W[a, d] + W[b, c] + W[b, d] + W[c, d]
    return tuple(int(v) for v in combos[int(np.argmax(totals))])

def _heuristic_seed(W: np.ndarray) -> tuple[int, ...]:
    """Top-4 vertices by strength over above-average weights."""
    p = W.shape[0]
    off = W[~np.eye(p, dtype=bool)]
    s = (W * (W > off.mean())).sum(axis=1)
    order = np.lexsort((np.arange(p), -s))
    return tuple(sorted(int(v) for v in order[:4]))


def _best_planar_on_five(W: np.ndarray) -> FilteringNetwork:
    """p=5 is solvable exactly: K5 minus its weakest edge.

    The greedy insertion heuristic can discard a heavier edge here, so the
    builder special-cases the only size where exhaustive search is trivial.
    """
    pairs = list(itertools.combinations(range(5), 2))
    drop = min(pairs, key=lambda e: (W[e[0], e[1]], e))
    sa, sb = (W[drop[0]].sum(), W[drop[1]].sum())
    # insert the endpoint losing less weight; ties keep the lower index seeded
    inserted = drop[0] if (sa, -drop[0]) < (sb, -drop[1]) else drop[1]
    other = drop[1] if inserted == drop[0] else drop[0]
    seed = tuple(sorted(v for v in range(5) if v != inserted))
    face = tuple(sorted(v for v in seed if v != other))
    edges = sorted(e for e in pairs if e != drop)
    total = sum(W[i, j] for i, j in edges)
    return FilteringNetwork(
        p=5,
        labels=[],
        edges=edges,
        seed=seed,  # type: ignore[arg-type]
        insertions=[(inserted, face)],  # type: ignore[list-item]
        retained_weight=float(total),
        gain="",
    )


def build_tmfg(sim: SimilarityMatrix, gain: str = "squared") -> FilteringNetwork:
    """Build the TMFG of a similarity matrix under the chosen gain transform."""
    p = sim.p
    if p < 4:
        raise ValidationError(f"TMFG needs at least 4 nodes, got {p}")
    W = _gain_weights(sim, gain)

    if p == 4:
        edges = sorted(itertools.combinations(range(4), 2))
        return FilteringNetwork(
            p=4,
            labels=list(sim.labels),
            edges=edges,
            seed=(0, 1, 2, 3),
            insertions=[],
            retained_weight=float(sum(W[i, j] for i, j in edges)),
            gain=gain,
        )
    if p == 5:
        net = _best_planar_on_five(W)
        net.labels = list(sim.labels)
        net.gain = gain
        return net

    seed = _exact_seed(W) if p <= _EXACT_SEED_LIMIT else _heuristic_seed(W)

    n_faces_max = 3 * p - 8  # every slot ever created: 4 seed faces + 3 per insertion
    faces = np.zeros((n_faces_max, 3), dtype=int)
    face_active = np.zeros(n_faces_max, dtype=bool)
    remaining = np.ones(p, dtype=bool)
    for v in seed:
        remaining[v] = False

    # gains[v, f] = weight v would connect with if inserted into face slot f
    gains = np.full((p, n_faces_max), -np.inf)

    def add_face(slot: int, tri: tuple[int, int, int]):
        faces[slot] = tri
        face_active[slot] = True
        rem = np.flatnonzero(remaining)
        if rem.size:
            gains[rem, slot] = W[np.ix_(rem, list(tri))].sum(axis=1)

    for slot, tri in enumerate(itertools.combinations(seed, 3)):
        add_face(slot, tri)
    n_faces = 4

    edges = set(tuple(sorted(e)) for e in itertools.combinations(seed, 2))
    insertions: list[tuple[int, tuple[int, int, int]]] = []
    total = float(sum(W[i, j] for i, j in edges))

    for _ in range(p - 4):
        best = gains.max()
        cand = np.argwhere(gains == best)
        if cand.shape[0] > 1:
            # lowest node index first, then lexicographically smallest face
            node = int(cand[:, 0].min())
            slots = cand[cand[:, 0] == node][:, 1]
            slot = int(min(slots, key=lambda s: tuple(faces[s])))
        else:
            node, slot = int(cand[0, 0]), int(cand[0, 1])
        tri = tuple(int(x) for x in faces[slot])

        insertions.append((node, tri))  # type: ignore[arg-type]
        total += float(best)
        for x in tri:
            edges.add(tuple(sorted((node, x))))

        remaining[node] = False
        gains[node, :] = -np.inf
        face_active[slot] = False
        gains[:, slot] = -np.inf
        for pair in itertools.combinations(tri, 2):
            add_face(n_faces, tuple(sorted((node,) + pair)))
            n_faces += 1

    return FilteringNetwork(
        p=p,
        labels=list(sim.labels),
        edges=sorted(edges),
        seed=tuple(sorted(seed)),  # type: ignore[arg-type]
        insertions=insertions,
        retained_weight=total,
        gain=gain,
    )


def clique_forest(net: FilteringNetwork) -> CliqueTree:
    """Replay the insertion history into the clique tree.

    Cliques are the seed tetrahedron plus one per insertion; each separator is
    the host face, linking the new clique to the clique that owned that face.
    """
    cliques: list[tuple[int, int, int, int]] = [tuple(sorted(net.seed))]  # type: ignore[list-item]
    separators: list[tuple[int, int, int]] = []
    tree_edges: list[tuple[int, int, int]] = []
    owner: dict[tuple[int, int, int], int] = {
        tuple(sorted(tri)): 0 for tri in itertools.combinations(net.seed, 3)
    }
    for node, face in net.insertions:
        face = tuple(sorted(face))
        if face not in owner:
            raise DataError(f"insertion record references unknown face {face}")
        parent = owner.pop(face)
        new_idx = len(cliques)
        cliques.append(tuple(sorted((node,) + face)))  # type: ignore[arg-type]
        separators.append(face)
        tree_edges.append((parent, new_idx, len(separators) - 1))
        for pair in itertools.combinations(face, 2):
            owner[tuple(sorted((node,) + pair))] = new_idx
    if len(cliques) != net.p - 3:
        raise DataError("insertion history inconsistent with node count")
    return CliqueTree(cliques=cliques, separators=separators, edges=tree_edges)


def centrality(net: FilteringNetwork, kind: str = "eigenvector") -> CentralityVector:
    if kind not in CENTRALITY_KINDS:
        raise ValidationError(f"centrality kind must be one of {CENTRALITY_KINDS}")
    if kind == "degree":
        return CentralityVector(values=net.degrees().astype(float), kind=kind)
    if kind == "eigenvector":
        return CentralityVector(values=_eigenvector_scores(net), kind=kind)
    bc = nx.betweenness_centrality(net.to_graph(), normalized=False)
    return CentralityVector(values=np.array([bc[i] for i in range(net.p)]), kind=kind)


def _eigenvector_scores(net: FilteringNetwork) -> np.ndarray:
    """Principal adjacency eigenvector by power iteration, scaled to max 1."""
    A = net.adjacency()
    v = np.full(net.p, 1.0 / net.p)
    for _ in range(_POWER_MAX_STEPS):
        w = A @ v
        w /= np.linalg.norm(w)
        if np.max(np.abs(w - v)) < _POWER_TOL:
            return w / w.max()
        v = w
    raise NumericalError(
        f"eigenvector centrality failed to converge in {_POWER_MAX_STEPS} iterations"
    )


def sector_link_stats(
    net: FilteringNetwork, sectors: SectorMap, cent: CentralityVector
) -> SectorLinkStats:
    """Per-sector size, internal-link fraction and mean centrality."""
    idx = {t: i for i, t in enumerate(net.labels)}
    uncovered = [t for t in net.labels if t not in sectors.labels]
    if uncovered:
        raise DataError(f"sector map does not cover: {', '.join(uncovered)}")
    per_sector: dict[str, SectorStats] = {}
    warnings: list[str] = []
    for name in sectors.sectors():
        members = [idx[t] for t in sectors.members(name) if t in idx]
        if not members:
            warnings.append(f"sector {name!r} has no members in the universe; excluded")
            continue
        inside = set(members)
        internal = touched = 0
        for i, j in net.edges:
            a, b = i in inside, j in inside
            if a or b:
                touched += 1
            if a and b:
                internal += 1
        frac = internal / touched if touched else 0.0
        mean_c = float(cent.values[members].mean())
        per_sector[name] = SectorStats(
            size=len(members),
            internal_fraction=frac,
            mean_centrality=mean_c,
            log_mean_centrality=float(np.log(mean_c)) if mean_c > 0 else float("-inf"),
            node_indices=members,
        )
    return SectorLinkStats(per_sector=per_sector, centrality_kind=cent.kind, warnings=warnings)


def edge_list_rows(net: FilteringNetwork, sim: SimilarityMatrix) -> list[dict]:
    """Edge list with similarity weights, ready for CSV emission."""
    return [
        {
            "node_i": net.labels[i],
            "node_j": net.labels[j],
            "weight": float(sim.values[i, j]),
        }
        for i, j in net.edges
    ]


def clique_tree_document(tree: CliqueTree) -> dict:
    return {
        "cliques": [list(c) for c in tree.cliques],
        "separators": [list(s) for s in tree.separators],
        "tree": [list(e) for e in tree.edges],
    }
