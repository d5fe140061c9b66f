"""Gene co-expression graphs: weighted construction, thresholding, components,
modularity, and multi-level greedy community detection."""
from __future__ import annotations

import csv
import heapq
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence
from xml.etree import ElementTree as ET

import numpy as np

from .correlation import correlation_block
from .errors import GraphError, ValidationError
from .masks import GeneSet
from .matrix import ExpressionMatrix

logger = logging.getLogger(__name__)

GAIN_TOL = 1e-12


@dataclass(frozen=True)
class WeightedGeneGraph:
    """Complete weighted graph over genes; w[i, j] = |Pearson| over the cohort's samples."""

    genes: tuple[str, ...]
    weights: np.ndarray
    cohort: str | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "genes", tuple(self.genes))
        n = len(self.genes)
        if w.shape != (n, n):
            raise ValidationError("weight matrix must be square over genes")
        if n and (w.min() < -1e-12 or w.max() > 1.0 + 1e-12):
            raise ValidationError("weights must lie in [0, 1]")


@dataclass(frozen=True)
class GeneGraph:
    """Simple undirected graph over gene nodes; edges are index pairs (u < v)."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        norm = []
        seen = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValidationError("self-loops are not allowed")
            if not (0 <= u < len(self.nodes) and 0 <= v < len(self.nodes)):
                raise ValidationError("edge endpoint out of range")
            e = (min(u, v), max(u, v))
            if e in seen:
                continue
            seen.add(e)
            norm.append(e)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in self.nodes]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def isolated_nodes(self) -> tuple[str, ...]:
        deg = self.degrees()
        return tuple(self.nodes[i] for i in np.flatnonzero(deg == 0))


@dataclass(frozen=True)
class Partition:
    """Community membership aligned to a graph's node order; indices contiguous 0..C-1."""

    membership: tuple[int, ...]
    n_communities: int
    q: float

    def __post_init__(self):
        object.__setattr__(self, "membership", tuple(int(c) for c in self.membership))
        got = set(self.membership)
        if got != set(range(self.n_communities)):
            raise ValidationError("community indices must be contiguous 0..C-1")

    def communities(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_communities)]
        for i, c in enumerate(self.membership):
            out[c].append(i)
        return out


def build_weighted(
    m: ExpressionMatrix, genes: GeneSet | Sequence[str], cohort: str | None = None
) -> WeightedGeneGraph:
    """All-pairs |Pearson| over the cohort's sample columns.

    cohort=None uses every sample. Genes constant within the cohort are
    excluded with a logged list; fewer than 2 usable genes is an error.
    """
    gene_ids = list(genes.gene_ids if isinstance(genes, GeneSet) else genes)
    if cohort is None:
        cols = np.arange(m.n_samples, dtype=np.intp)
    else:
        cols = m.site_columns(cohort)
    if cols.size < 3:
        raise ValidationError(f"cohort {cohort!r} has {cols.size} samples; need >= 3")
    rows = m.gene_index(gene_ids)
    block = m.values[np.ix_(rows, cols)]
    corr, ok = correlation_block(block)
    dropped = [gene_ids[i] for i in np.flatnonzero(~ok)]
    if dropped:
        logger.warning(
            "cohort %s: excluded %d gene(s) constant within cohort: %s",
            cohort or "all", len(dropped), ", ".join(dropped[:10]),
        )
    kept = [gene_ids[i] for i in np.flatnonzero(ok)]
    if len(kept) < 2:
        raise ValidationError("fewer than 2 usable genes for the weighted graph")
    w = np.abs(corr)
    np.fill_diagonal(w, 0.0)
    return WeightedGeneGraph(tuple(kept), np.clip(w, 0.0, 1.0), cohort)


def threshold_graph(wg: WeightedGeneGraph, t: float) -> GeneGraph:
    """Unweighted graph keeping edges with weight >= t; isolated nodes retained."""
    iu = np.triu_indices(len(wg.genes), k=1)
    keep = wg.weights[iu] >= t
    edges = tuple((int(u), int(v)) for u, v, k in zip(iu[0], iu[1], keep) if k)
    g = GeneGraph(wg.genes, edges, threshold=float(t))
    iso = g.isolated_nodes()
    if iso:
        logger.debug("threshold %.3g leaves %d isolated node(s)", t, len(iso))
    return g


def connected_components(g: GeneGraph) -> list[list[int]]:
    """Connected components as sorted node-index lists."""
    adj = g.adjacency()
    seen = [False] * g.n_nodes
    comps: list[list[int]] = []
    for start in range(g.n_nodes):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in adj[v]:
                if not seen[u]:
                    seen[u] = True
                    stack.append(u)
        comps.append(sorted(comp))
    return comps


def subgraph(g: GeneGraph, node_indices: Sequence[int]) -> GeneGraph:
    idx = sorted(set(int(i) for i in node_indices))
    pos = {old: new for new, old in enumerate(idx)}
    edges = tuple(
        (pos[u], pos[v]) for u, v in g.edges if u in pos and v in pos
    )
    return GeneGraph(tuple(g.nodes[i] for i in idx), edges, threshold=g.threshold)


def giant_component(g: GeneGraph) -> GeneGraph:
    """Largest connected component; ties break to the component with the smallest node ID."""
    comps = connected_components(g)
    if not comps:
        raise ValidationError("graph has no nodes")
    best_size = max(len(c) for c in comps)
    candidates = [c for c in comps if len(c) == best_size]
    best = min(candidates, key=lambda c: min(g.nodes[i] for i in c))
    return subgraph(g, best)


def modularity(g: GeneGraph, p: Partition | Sequence[int]) -> float:
    """Newman modularity Q = sum_c [L_c/m - (d_c/(2m))^2].

    L_c counts intra-community edges, d_c the total degree of community c,
    m the edge count. Undefined (raises) for zero-edge graphs.
    """
    membership = list(p.membership) if isinstance(p, Partition) else [int(c) for c in p]
    if len(membership) != g.n_nodes:
        raise ValidationError("partition must cover every node")
    m = g.n_edges
    if m == 0:
        raise GraphError("modularity undefined for a zero-edge graph")
    n_comm = max(membership) + 1
    intra = np.zeros(n_comm)
    degree = np.zeros(n_comm)
    for u, v in g.edges:
        cu, cv = membership[u], membership[v]
        degree[cu] += 1
        degree[cv] += 1
        if cu == cv:
            intra[cu] += 1
    return float(np.sum(intra / m - (degree / (2.0 * m)) ** 2))


def _one_level(
    adj: list[dict[int, float]], k: list[float], m: float, order: np.ndarray
) -> tuple[list[int], bool]:
    """Local-move phase: greedily reassign nodes while any move raises Q.

    Candidates for each node are its neighbor communities plus a fresh
    singleton community (gain 0 relative to the removed state); without the
    fresh option a badly attached node could be forced back at negative gain.
    """
    n = len(adj)
    comm = list(range(n))
    tot = k.copy()
    size = [1] * n
    free: list[int] = []
    moved_any = False
    improved = True
    while improved:
        improved = False
        for v in order:
            v = int(v)
            cv = comm[v]
            neigh_w: dict[int, float] = {}
            for u, w in adj[v].items():
                cu = comm[u]
                neigh_w[cu] = neigh_w.get(cu, 0.0) + w
            tot[cv] -= k[v]
            size[cv] -= 1
            # gain (scaled by m) of joining community c after removal from cv
            best_c = cv
            best_gain = neigh_w.get(cv, 0.0) - k[v] * tot[cv] / (2.0 * m)
            if 0.0 > best_gain + GAIN_TOL:
                best_c = -1  # fresh singleton community
                best_gain = 0.0
            for c in sorted(neigh_w):
                if c == cv:
                    continue
                gain = neigh_w[c] - k[v] * tot[c] / (2.0 * m)
                if gain > best_gain + GAIN_TOL:
                    best_gain = gain
                    best_c = c
            if size[cv] == 0 and best_c != cv:
                heapq.heappush(free, cv)
            if best_c == -1:
                best_c = heapq.heappop(free)  # a label is always free here
            comm[v] = best_c
            tot[best_c] += k[v]
            size[best_c] += 1
            if best_c != cv:
                improved = True
                moved_any = True
    return comm, moved_any


def _aggregate(
    adj: list[dict[int, float]], loops: list[float], comm: list[int]
) -> tuple[list[dict[int, float]], list[float], dict[int, int]]:
    labels = sorted(set(comm))
    relabel = {c: i for i, c in enumerate(labels)}
    nn = len(labels)
    new_adj: list[dict[int, float]] = [dict() for _ in range(nn)]
    new_loops = [0.0] * nn
    for v in range(len(adj)):
        cv = relabel[comm[v]]
        new_loops[cv] += loops[v]
        for u, w in adj[v].items():
            if u <= v:
                continue
            cu = relabel[comm[u]]
            if cu == cv:
                new_loops[cv] += w
            else:
                new_adj[cv][cu] = new_adj[cv].get(cu, 0.0) + w
                new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
    return new_adj, new_loops, relabel


# Graphs whose non-isolated core is at most this large are solved by exact
# enumeration over all set partitions (Bell(8) = 4140); greedy local moves
# provably miss the optimum on some of these tiny instances.
EXACT_NODE_LIMIT = 8


def _exact_partition(g: GeneGraph, core: list[int]) -> list[int]:
    """Exhaustive modularity maximization over the core; isolated nodes stay singletons.

    Enumerates restricted growth strings over the core in canonical order, so
    the argmax (first encountered on ties) is independent of input node order.
    """
    m = float(g.n_edges)
    core_pos = {v: i for i, v in enumerate(core)}
    edges = [(core_pos[u], core_pos[v]) for u, v in g.edges]
    deg = [0] * len(core)
    for u, v in edges:
        deg[u] += 1
        deg[v] += 1

    def q_of(mem: tuple[int, ...]) -> float:
        n_comm = max(mem) + 1
        intra = [0.0] * n_comm
        dc = [0.0] * n_comm
        for u, v in edges:
            if mem[u] == mem[v]:
                intra[mem[u]] += 1.0
        for i, d in enumerate(deg):
            dc[mem[i]] += d
        return sum(intra[c] / m - (dc[c] / (2.0 * m)) ** 2 for c in range(n_comm))

    nc = len(core)
    a = [0] * nc
    best_mem = tuple(a)
    best_q = q_of(best_mem)

    def rec(i: int, mx: int):
        nonlocal best_mem, best_q
        if i == nc:
            q = q_of(tuple(a))
            if q > best_q + GAIN_TOL:
                best_q = q
                best_mem = tuple(a)
            return
        for c in range(mx + 2):
            a[i] = c
            rec(i + 1, max(mx, c))

    if nc > 1:
        rec(1, 0)

    membership = [-1] * g.n_nodes
    for i, v in enumerate(core):
        membership[v] = best_mem[i]
    next_label = max(best_mem) + 1
    for v in range(g.n_nodes):
        if membership[v] < 0:
            membership[v] = next_label
            next_label += 1
    return membership


def detect_communities(g: GeneGraph, seed: int = 0) -> Partition:
    """Modularity-maximizing community detection.

    Multi-level greedy optimization (local moves, then aggregation, repeated
    until no gain), with the node visit order shuffled once per aggregation
    level from the seeded generator. Tiny graphs (non-isolated core of at
    most EXACT_NODE_LIMIT nodes) are instead solved exactly by partition
    enumeration, where greedy moves can provably stall below the optimum.
    The algorithm runs in a canonical node space ordered by gene ID, so the
    result depends only on the graph's structure and the seed, not on the
    input node ordering. Isolated nodes remain singleton communities
    (contributing 0 to Q). Raises for zero-edge graphs.
    """
    if g.n_edges == 0:
        raise GraphError("community detection undefined for a zero-edge graph")
    n = g.n_nodes
    canon = sorted(range(n), key=lambda i: (g.nodes[i], i))
    rank = {orig: r for r, orig in enumerate(canon)}

    has_edge = [False] * n
    for u, v in g.edges:
        has_edge[u] = has_edge[v] = True
    core = [v for v in canon if has_edge[v]]
    if len(core) <= EXACT_NODE_LIMIT:
        per_node = _exact_partition(g, core)
        relabel: dict[int, int] = {}
        for c in per_node:
            if c not in relabel:
                relabel[c] = len(relabel)
        final = [relabel[c] for c in per_node]
        return Partition(tuple(final), len(relabel), modularity(g, final))
    adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for u, v in g.edges:
        cu, cv = rank[u], rank[v]
        adj[cu][cv] = adj[cu].get(cv, 0.0) + 1.0
        adj[cv][cu] = adj[cv].get(cu, 0.0) + 1.0
    loops = [0.0] * n
    m = float(g.n_edges)
    rng = np.random.default_rng(seed)
    membership = list(range(n))  # in canonical space

    while True:
        k = [sum(adj[i].values()) + 2.0 * loops[i] for i in range(len(adj))]
        order = np.arange(len(adj))
        rng.shuffle(order)
        comm, moved = _one_level(adj, k, m, order)
        if not moved:
            break
        adj, loops, relabel = _aggregate(adj, loops, comm)
        membership = [relabel[comm[c]] for c in membership]
        if len(adj) <= 1:
            break

    # contiguous labels in order of first appearance over the original node order
    per_node = [membership[rank[i]] for i in range(n)]
    relabel2: dict[int, int] = {}
    for c in per_node:
        if c not in relabel2:
            relabel2[c] = len(relabel2)
    final = [relabel2[c] for c in per_node]
    q = modularity(g, final)
    return Partition(tuple(final), len(relabel2), q)


def singleton_partition(g: GeneGraph) -> Partition:
    q = modularity(g, list(range(g.n_nodes))) if g.n_edges else 0.0
    return Partition(tuple(range(g.n_nodes)), g.n_nodes, q)


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    modularity: float | None   # None when the thresholded graph has no edges
    n_edges: int
    n_communities: int


def sweep_thresholds(t_min: float, t_max: float, step: float) -> list[float]:
    if step <= 0 or t_max < t_min:
        raise ValidationError("need step > 0 and t_max >= t_min")
    out = []
    i = 0
    while True:
        t = round(t_min + i * step, 10)
        if t > t_max + 1e-9:
            break
        out.append(t)
        i += 1
    return out


def select_threshold(
    wg: WeightedGeneGraph,
    t_min: float = 0.4,
    t_max: float = 0.9,
    step: float = 0.02,
    override: float | None = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[GeneGraph, Partition, list[SweepRow]]:
    """Sweep thresholds, detect communities on each full thresholded graph,
    and return the graph/partition of maximum modularity (tie: smallest t).

    Candidates whose graph has no edges are recorded with modularity None and
    skipped by the argmax. With `override` set, the sweep is bypassed and the
    returned table holds the single override row.
    """
    if override is not None:
        g = threshold_graph(wg, override)
        p = detect_communities(g, seed)
        row = SweepRow(float(override), p.q, g.n_edges, p.n_communities)
        return g, p, [row]

    candidates = sweep_thresholds(t_min, t_max, step)

    def evaluate(t: float) -> tuple[GeneGraph, Partition | None]:
        g = threshold_graph(wg, t)
        if g.n_edges == 0:
            return g, None
        return g, detect_communities(g, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, candidates))
    else:
        results = [evaluate(t) for t in candidates]

    table: list[SweepRow] = []
    best_i = -1
    for i, (t, (g, p)) in enumerate(zip(candidates, results)):
        if p is None:
            table.append(SweepRow(t, None, g.n_edges, 0))
            continue
        table.append(SweepRow(t, p.q, g.n_edges, p.n_communities))
        if best_i < 0 or p.q > results[best_i][1].q:
            best_i = i
    if best_i < 0:
        raise GraphError("every candidate threshold produced a zero-edge graph")
    g, p = results[best_i]
    return g, p, table


def write_sweep(table: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "modularity", "edges", "communities"])
        for r in table:
            w.writerow([repr(r.threshold), "" if r.modularity is None else repr(r.modularity),
                        r.n_edges, r.n_communities])


@dataclass(frozen=True)
class NetworkSummary:
    n_nodes: int
    n_edges: int
    average_degree: float
    modularity: float
    component_sizes: tuple[int, ...]
    community_sizes: tuple[int, ...]


def network_summary(g: GeneGraph, p: Partition | None = None) -> NetworkSummary:
    """Node/edge counts, average degree, modularity, component and community sizes."""
    comps = connected_components(g) if g.n_nodes else []
    comp_sizes = tuple(sorted((len(c) for c in comps), reverse=True))
    if p is not None and g.n_edges > 0:
        q = p.q
        comm_sizes = tuple(sorted((len(c) for c in p.communities()), reverse=True))
    else:
        q = 0.0
        comm_sizes = tuple(sorted((len(c) for c in p.communities()), reverse=True)) if p else ()
    avg_deg = 2.0 * g.n_edges / g.n_nodes if g.n_nodes else 0.0
    return NetworkSummary(g.n_nodes, g.n_edges, avg_deg, q, comp_sizes, comm_sizes)


def write_edge_list(g: GeneGraph, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("src\tdst\n")
        for u, v in g.edges:
            fh.write(f"{g.nodes[u]}\t{g.nodes[v]}\n")


def _graphml_type(values: list) -> str:
    if all(isinstance(v, bool) for v in values):
        return "boolean"
    if all(isinstance(v, int) and not isinstance(v, bool) for v in values):
        return "int"
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        return "double"
    return "string"


def write_graphml(
    g: GeneGraph, path: str | Path, node_attrs: Mapping[str, Mapping[str, object]] | None = None
) -> None:
    """GraphML export with optional per-node attributes keyed by gene ID."""
    node_attrs = node_attrs or {}
    root = ET.Element("graphml", xmlns="http://graphml.graphdrawing.org/xmlns")
    keys: dict[str, str] = {}
    for name, mapping in node_attrs.items():
        kid = f"d{len(keys)}"
        keys[name] = kid
        ET.SubElement(
            root, "key", id=kid, **{"for": "node", "attr.name": name,
                                    "attr.type": _graphml_type(list(mapping.values()))},
        )
    graph = ET.SubElement(root, "graph", edgedefault="undirected")
    for gene in g.nodes:
        node = ET.SubElement(graph, "node", id=gene)
        for name, mapping in node_attrs.items():
            if gene in mapping:
                data = ET.SubElement(node, "data", key=keys[name])
                value = mapping[gene]
                data.text = str(value).lower() if isinstance(value, bool) else str(value)
    for u, v in g.edges:
        ET.SubElement(graph, "edge", source=g.nodes[u], target=g.nodes[v])
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="utf-8", xml_declaration=True)
