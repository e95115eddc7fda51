"""Directed data-link graph of the secondary control and its matrix views"""
import enum
import logging
from typing import Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np

from mgdde.errors import GraphError

_logger = logging.getLogger(__name__)

Edge = Tuple[int, int]


class CommGraph:
    """A time-invariant, unweighted directed communication graph

    Vertices are zero-based inverter indices. An edge ``(j, i)`` means vertex ``i`` receives
    the averaged active power measured at vertex ``j``.

    Examples:
        >>> chain = CommGraph.from_config(3, [[1, 2], [2, 1], [2, 3], [3, 2]])
        >>> chain.in_degrees()
        [1, 2, 1]
    """
    def __init__(self, vertex_count: int, edges: Iterable[Edge]):
        if vertex_count < 1:
            raise GraphError('empty', 'a communication graph needs at least one vertex')
        graph = nx.DiGraph()
        graph.add_nodes_from(range(vertex_count))
        for source, target in edges:
            if not (0 <= source < vertex_count and 0 <= target < vertex_count):
                raise GraphError('vertex-range',
                                 f'edge {source + 1} -> {target + 1} references a vertex outside 1..{vertex_count}')
            if source == target:
                raise GraphError('self-loop', f'vertex {source + 1} links to itself')
            graph.add_edge(source, target)
        self._graph = graph
        self.vertex_count = vertex_count
        self.validate()
        _logger.debug('Communication graph: %d vertices, %d edges', vertex_count, graph.number_of_edges())

    @classmethod
    def from_config(cls, vertex_count: int, edges: Sequence[Sequence[int]]) -> 'CommGraph':
        """Build a graph from 1-based ``[from, to]`` pairs as they appear in scenario files"""
        return cls(vertex_count, ((int(source) - 1, int(target) - 1) for source, target in edges))

    @classmethod
    def complete(cls, vertex_count: int) -> 'CommGraph':
        return cls(vertex_count, ((j, i) for i in range(vertex_count) for j in range(vertex_count) if i != j))

    @classmethod
    def bidirectional_chain(cls, vertex_count: int) -> 'CommGraph':
        edges: List[Edge] = []
        for i in range(vertex_count - 1):
            edges.extend(((i, i + 1), (i + 1, i)))
        return cls(vertex_count, edges)

    def validate(self) -> None:
        """Raise a `GraphError` if any vertex has no incoming edge"""
        starved = [vertex + 1 for vertex, degree in self._graph.in_degree() if degree == 0]
        if starved:
            raise GraphError('zero-in-degree', f'vertices without an incoming edge: {starved}')

    @property
    def digraph(self) -> nx.DiGraph:
        return self._graph

    @property
    def edges(self) -> List[Edge]:
        return sorted(self._graph.edges())

    def in_neighbors(self, vertex: int) -> List[int]:
        return sorted(self._graph.predecessors(vertex))

    def in_degrees(self) -> List[int]:
        return [self._graph.in_degree(vertex) for vertex in range(self.vertex_count)]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CommGraph) and self.vertex_count == other.vertex_count and self.edges == other.edges

    def __repr__(self) -> str:
        return f'CommGraph(vertex_count={self.vertex_count}, edges={self.edges})'


def adjacency_matrix(graph: CommGraph) -> np.ndarray:
    """Return A_g with entry (i, j) = 1 iff the edge j -> i exists"""
    nodes = list(range(graph.vertex_count))
    # networkx orients (row=source, column=target); the consensus law needs receivers on rows
    return nx.to_numpy_array(graph.digraph, nodelist=nodes, weight=None).T


def degree_matrix(graph: CommGraph) -> np.ndarray:
    """Return the diagonal in-degree matrix D_g"""
    return np.diag(np.asarray(graph.in_degrees(), dtype=float))


def laplacian(graph: CommGraph) -> np.ndarray:
    """Return L = D_g - A_g; every row sums to zero"""
    return degree_matrix(graph) - adjacency_matrix(graph)


class ConsensusVariant(str, enum.Enum):
    """Secondary-control consensus law"""
    REFERENCE_TRACKING = 'reference-tracking'
    AVERAGE = 'average'
