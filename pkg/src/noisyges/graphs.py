"""DAG / CPDAG representations and the Insert/Delete operator calculus.

Nodes are integers ``0..d-1``.  Graph values are immutable; every
operation returns a new graph.
"""

from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Iterator, List, Optional, Sequence, Tuple

INSERT = "insert"
DELETE = "delete"

DEFAULT_POOL_CAP = 12


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    pass


class InvalidOperator(GraphError):
    pass


class ExtensionFailure(GraphError):
    pass


class DimensionMismatch(GraphError):
    pass


def _check_node(d: int, *nodes: int) -> None:
    for v in nodes:
        if not 0 <= v < d:
            raise IndexError(f"node {v} out of range for d={d}")


@dataclass(frozen=True)
class Dag:
    """A DAG stored as per-node parent sets."""

    d: int
    parents: Tuple[FrozenSet[int], ...]

    def __post_init__(self):
        if self.d < 1:
            raise GraphError("d must be >= 1")
        if len(self.parents) != self.d:
            raise GraphError("need one parent set per node")
        for j, pa in enumerate(self.parents):
            for i in pa:
                _check_node(self.d, i)
                if i == j:
                    raise GraphError(f"self-loop at node {j}")
        if topological_order(self) is None:
            raise CycleError("parent sets contain a directed cycle")

    @classmethod
    def from_edges(cls, d: int, edges: Iterable[Tuple[int, int]]) -> "Dag":
        pa = [set() for _ in range(d)]
        for a, b in edges:
            _check_node(d, a, b)
            pa[b].add(a)
        return cls(d, tuple(frozenset(p) for p in pa))

    @classmethod
    def empty(cls, d: int) -> "Dag":
        return cls(d, tuple(frozenset() for _ in range(d)))

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return sorted((i, j) for j in range(self.d) for i in self.parents[j])

    def children(self, i: int) -> List[int]:
        return [j for j in range(self.d) if i in self.parents[j]]

    def to_cpdag_form(self) -> "Cpdag":
        """The same edges viewed as a fully directed PDAG (no completion)."""
        return Cpdag(self.d, frozenset(self.edges), frozenset())


def topological_order(g: Dag) -> Optional[List[int]]:
    indeg = [len(p) for p in g.parents]
    children = [[] for _ in range(g.d)]
    for j, pa in enumerate(g.parents):
        for i in pa:
            children[i].append(j)
    ready = [v for v in range(g.d) if indeg[v] == 0]
    order = []
    while ready:
        ready.sort()
        v = ready.pop(0)
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    return order if len(order) == g.d else None


def _upair(a: int, b: int) -> Tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class Cpdag:
    """Partially directed graph with directed pairs ``(a, b)`` meaning a->b and
    undirected pairs stored as sorted tuples.

    The same type carries the intermediate PDAGs produced while applying an
    operator; use :func:`is_completed` to check completedness.
    """

    d: int
    directed: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)
    undirected: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "directed", frozenset((int(a), int(b)) for a, b in self.directed))
        object.__setattr__(self, "undirected", frozenset(_upair(int(a), int(b)) for a, b in self.undirected))
        for a, b in itertools.chain(self.directed, self.undirected):
            _check_node(self.d, a, b)
            if a == b:
                raise GraphError(f"self-loop at node {a}")
        for a, b in self.directed:
            if (b, a) in self.directed or _upair(a, b) in self.undirected:
                raise GraphError(f"pair {a},{b} carries more than one edge")

    @classmethod
    def empty(cls, d: int) -> "Cpdag":
        return cls(d)

    # adjacency helpers -------------------------------------------------
    def neighbors(self, v: int) -> FrozenSet[int]:
        """Nodes joined to ``v`` by an undirected edge."""
        return frozenset(b if a == v else a for a, b in self.undirected if v in (a, b))

    def parents(self, v: int) -> FrozenSet[int]:
        return frozenset(a for a, b in self.directed if b == v)

    def children(self, v: int) -> FrozenSet[int]:
        return frozenset(b for a, b in self.directed if a == v)

    def adjacent(self, v: int) -> FrozenSet[int]:
        return self.neighbors(v) | self.parents(v) | self.children(v)

    def is_adjacent(self, a: int, b: int) -> bool:
        return (a, b) in self.directed or (b, a) in self.directed or _upair(a, b) in self.undirected

    def n_edges(self) -> int:
        return len(self.directed) + len(self.undirected)

    def pair_status(self, a: int, b: int) -> int:
        """0 none, 1 a->b, 2 b->a, 3 undirected (with a < b)."""
        if (a, b) in self.directed:
            return 1
        if (b, a) in self.directed:
            return 2
        if _upair(a, b) in self.undirected:
            return 3
        return 0

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "directed": [list(e) for e in sorted(self.directed)],
            "undirected": [list(e) for e in sorted(self.undirected)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "Cpdag":
        return cls(int(obj["d"]), frozenset(map(tuple, obj["directed"])), frozenset(map(tuple, obj["undirected"])))

    @classmethod
    def from_json(cls, text: str) -> "Cpdag":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Operator:
    """Insert(a, b, T) or Delete(a, b, H); ``aux`` holds T or H."""

    kind: str
    a: int
    b: int
    aux: FrozenSet[int] = frozenset()

    def sort_key(self):
        return (self.kind, self.a, self.b, tuple(sorted(self.aux)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "aux": sorted(self.aux)}

    @classmethod
    def from_dict(cls, obj: dict) -> "Operator":
        return cls(obj["kind"], int(obj["a"]), int(obj["b"]), frozenset(obj["aux"]))

    def __str__(self):
        name = "Insert" if self.kind == INSERT else "Delete"
        return f"{name}({self.a}, {self.b}, {sorted(self.aux)})"


# ---------------------------------------------------------------------------
# operator validity


def neighbors_na(g: Cpdag, a: int, b: int) -> FrozenSet[int]:
    """Undirected neighbors of ``b`` that are adjacent to ``a``."""
    _check_node(g.d, a, b)
    if a == b:
        raise GraphError("a and b must differ")
    return g.neighbors(b) & g.adjacent(a)


def is_clique(g: Cpdag, nodes: Iterable[int]) -> bool:
    nodes = list(nodes)
    return all(g.is_adjacent(u, v) for u, v in itertools.combinations(nodes, 2))


def has_semi_directed_path(g: Cpdag, src: int, dst: int, blocked: FrozenSet[int] = frozenset()) -> bool:
    """Is there a path src ~> dst using undirected edges or edges pointing
    away from src, with no intermediate node in ``blocked``?"""
    out = [[] for _ in range(g.d)]
    for a, b in g.directed:
        out[a].append(b)
    for a, b in g.undirected:
        out[a].append(b)
        out[b].append(a)
    seen = {src}
    queue = deque([src])
    while queue:
        v = queue.popleft()
        for w in out[v]:
            if w == dst:
                return True
            if w in seen or w in blocked:
                continue
            seen.add(w)
            queue.append(w)
    return False


def _subsets(pool: Sequence[int], cap: int) -> Iterator[FrozenSet[int]]:
    if len(pool) > cap:
        raise GraphError(f"operator candidate pool of size {len(pool)} exceeds cap {cap}")
    for r in range(len(pool) + 1):
        for combo in itertools.combinations(pool, r):
            yield frozenset(combo)


def insert_is_valid(g: Cpdag, a: int, b: int, t: FrozenSet[int]) -> bool:
    if a == b or g.is_adjacent(a, b):
        return False
    nb = g.neighbors(b)
    adj_a = g.adjacent(a)
    if not t <= nb - adj_a:
        return False
    na_t = (nb & adj_a) | t
    if not is_clique(g, na_t):
        return False
    return not has_semi_directed_path(g, b, a, na_t)


def delete_is_valid(g: Cpdag, a: int, b: int, h: FrozenSet[int]) -> bool:
    if a == b or not ((a, b) in g.directed or _upair(a, b) in g.undirected):
        return False
    na = neighbors_na(g, a, b)
    if not h <= na:
        return False
    return is_clique(g, na - h)


def is_valid(g: Cpdag, op: Operator) -> bool:
    if op.kind == INSERT:
        return insert_is_valid(g, op.a, op.b, op.aux)
    if op.kind == DELETE:
        return delete_is_valid(g, op.a, op.b, op.aux)
    raise InvalidOperator(f"unknown operator kind {op.kind!r}")


def enumerate_valid_operators(g: Cpdag, kind: str, pool_cap: int = DEFAULT_POOL_CAP) -> List[Operator]:
    """All valid Insert or Delete operators on ``g`` in lexicographic order."""
    ops = []
    nbrs = [g.neighbors(v) for v in range(g.d)]
    adj = [g.adjacent(v) for v in range(g.d)]
    if kind == INSERT:
        for a in range(g.d):
            for b in range(g.d):
                if a == b or b in adj[a]:
                    continue
                na = nbrs[b] & adj[a]
                pool = sorted(nbrs[b] - adj[a])
                for t in _subsets(pool, pool_cap):
                    cond = na | t
                    if not is_clique(g, cond):
                        continue
                    if has_semi_directed_path(g, b, a, cond):
                        continue
                    ops.append(Operator(INSERT, a, b, t))
    elif kind == DELETE:
        for a in range(g.d):
            for b in range(g.d):
                if a == b or not ((a, b) in g.directed or _upair(a, b) in g.undirected):
                    continue
                na = nbrs[b] & adj[a]
                for h in _subsets(sorted(na), pool_cap):
                    if is_clique(g, na - h):
                        ops.append(Operator(DELETE, a, b, h))
    else:
        raise InvalidOperator(f"unknown operator kind {kind!r}")
    ops.sort(key=Operator.sort_key)
    return ops


def enumerate_dag_operators(g: Cpdag, kind: str) -> List[Operator]:
    """Single-edge moves on a fully directed graph, keeping it acyclic."""
    ops = []
    if kind == INSERT:
        for a in range(g.d):
            for b in range(g.d):
                if a != b and not g.is_adjacent(a, b) and not has_semi_directed_path(g, b, a):
                    ops.append(Operator(INSERT, a, b))
    elif kind == DELETE:
        ops = [Operator(DELETE, a, b) for a, b in sorted(g.directed)]
    else:
        raise InvalidOperator(f"unknown operator kind {kind!r}")
    return ops


# ---------------------------------------------------------------------------
# applying operators


def _modify(g: Cpdag, op: Operator) -> Cpdag:
    directed = set(g.directed)
    undirected = set(g.undirected)
    a, b = op.a, op.b
    if op.kind == INSERT:
        directed.add((a, b))
        for t in op.aux:
            undirected.discard(_upair(t, b))
            directed.add((t, b))
    else:
        directed.discard((a, b))
        undirected.discard(_upair(a, b))
        for h in op.aux:
            if _upair(b, h) in undirected:
                undirected.discard(_upair(b, h))
                directed.add((b, h))
            if _upair(a, h) in undirected:
                undirected.discard(_upair(a, h))
                directed.add((a, h))
    return Cpdag(g.d, frozenset(directed), frozenset(undirected))


def apply_operator(g: Cpdag, op: Operator, check: bool = True) -> Cpdag:
    """Apply a valid operator and re-complete the result to a CPDAG."""
    if check and not is_valid(g, op):
        raise InvalidOperator(f"{op} is not valid for this graph")
    return dag_to_cpdag(pdag_to_dag(_modify(g, op)))


def apply_dag_operator(g: Cpdag, op: Operator) -> Cpdag:
    """Raw edge edit used in DAG mode (no re-completion)."""
    if op.aux:
        raise InvalidOperator("DAG-mode operators carry no T/H set")
    if op.kind == INSERT:
        if g.is_adjacent(op.a, op.b) or has_semi_directed_path(g, op.b, op.a):
            raise InvalidOperator(f"{op} would break acyclicity")
        return Cpdag(g.d, g.directed | {(op.a, op.b)}, g.undirected)
    if (op.a, op.b) not in g.directed:
        raise InvalidOperator(f"{op}: no edge {op.a}->{op.b}")
    return Cpdag(g.d, g.directed - {(op.a, op.b)}, g.undirected)


# ---------------------------------------------------------------------------
# extension and completion


def pdag_to_dag(g: Cpdag) -> Dag:
    """Consistent DAG extension by repeated sink elimination.

    Among eligible sinks the highest-indexed node is removed first, so a lone
    undirected edge ``i - j`` with ``i < j`` is oriented ``i -> j``.
    """
    d = g.d
    alive = set(range(d))
    directed = set(g.directed)
    undirected = set(g.undirected)
    parents = [set() for _ in range(d)]
    for a, b in directed:
        parents[b].add(a)

    def adjacent(u, v):
        return (u, v) in directed or (v, u) in directed or _upair(u, v) in undirected

    while alive:
        chosen = None
        for x in sorted(alive, reverse=True):
            if any(a == x for a, _ in directed):
                continue
            nbrs = [b if a == x else a for a, b in undirected if x in (a, b)]
            adj_x = set(nbrs) | {a for a, b in directed if b == x}
            if all(adjacent(y, z) for y in nbrs for z in adj_x if z != y):
                chosen = x
                break
        if chosen is None:
            raise ExtensionFailure("graph admits no consistent DAG extension")
        x = chosen
        for a, b in list(undirected):
            if x in (a, b):
                y = b if a == x else a
                parents[x].add(y)
                undirected.discard((a, b))
        for e in [e for e in directed if e[1] == x]:
            directed.discard(e)
        alive.discard(x)
    return Dag(d, tuple(frozenset(p) for p in parents))


def v_structures(g: Dag) -> FrozenSet[Tuple[int, int, int]]:
    """Triples (a, c, b) with a -> c <- b, a < b, a and b non-adjacent."""
    out = set()
    for c in range(g.d):
        for a, b in itertools.combinations(sorted(g.parents[c]), 2):
            if a not in g.parents[b] and b not in g.parents[a]:
                out.add((a, c, b))
    return frozenset(out)


def skeleton(g: Dag) -> FrozenSet[Tuple[int, int]]:
    return frozenset(_upair(i, j) for j in range(g.d) for i in g.parents[j])


def dag_to_cpdag(g: Dag) -> Cpdag:
    """Essential graph of ``g``: orient v-structures, then close under Meek's rules."""
    d = g.d
    directed = set()
    for a, c, b in v_structures(g):
        directed.add((a, c))
        directed.add((b, c))
    undirected = set(skeleton(g)) - {_upair(a, b) for a, b in directed}

    def adj(u, v):
        return (u, v) in directed or (v, u) in directed or _upair(u, v) in undirected

    def orient(u, v):
        undirected.discard(_upair(u, v))
        directed.add((u, v))

    changed = True
    while changed:
        changed = False
        for u, v in sorted(undirected):
            for x, y in ((u, v), (v, u)):
                if _upair(x, y) not in undirected:
                    break
                # R1: a -> x - y, a not adjacent to y
                r1 = any((a, x) in directed and not adj(a, y) for a in range(d) if a != y)
                # R2: x -> c -> y
                r2 = any((x, c) in directed and (c, y) in directed for c in range(d))
                # R3: x - c1 -> y, x - c2 -> y, c1, c2 non-adjacent
                cs = [c for c in range(d) if _upair(x, c) in undirected and (c, y) in directed]
                r3 = any(not adj(c1, c2) for c1, c2 in itertools.combinations(cs, 2))
                # R4: x - c, c -> e -> y, e adjacent to x, c not adjacent to y
                r4 = any(
                    _upair(x, c) in undirected and (c, e) in directed and (e, y) in directed
                    and adj(x, e) and not adj(c, y)
                    for c in range(d) for e in range(d) if len({x, y, c, e}) == 4
                )
                if r1 or r2 or r3 or r4:
                    orient(x, y)
                    changed = True
                    break
    return Cpdag(d, frozenset(directed), frozenset(undirected))


def is_completed(g: Cpdag) -> bool:
    try:
        return dag_to_cpdag(pdag_to_dag(g)) == g
    except ExtensionFailure:
        return False


def shd(g1: Cpdag, g2: Cpdag) -> int:
    """Pairs whose edge status (none, a->b, b->a, undirected) differs."""
    if g1.d != g2.d:
        raise DimensionMismatch(f"graphs have {g1.d} and {g2.d} nodes")
    pairs = set()
    for a, b in itertools.chain(g1.directed, g1.undirected, g2.directed, g2.undirected):
        pairs.add(_upair(a, b))
    return sum(g1.pair_status(a, b) != g2.pair_status(a, b) for a, b in pairs)


def all_dags(d: int) -> Iterator[Dag]:
    """Every labelled DAG on d nodes (brute force; small d only)."""
    pairs = list(itertools.combinations(range(d), 2))
    for states in itertools.product((0, 1, 2), repeat=len(pairs)):
        edges = []
        for (a, b), s in zip(pairs, states):
            if s == 1:
                edges.append((a, b))
            elif s == 2:
                edges.append((b, a))
        try:
            yield Dag.from_edges(d, edges)
        except CycleError:
            continue
