"""1D interval partitions with interior-face bookkeeping.

Faces in 1D are points, so face "integrals" downstream reduce to point
evaluation.  Each interior face stores the ids of its left/right elements
and the face mesh size min(h_left, h_right).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Mesh1D:
    """Partition of (a, b) into intervals.

    Immutable after construction; safe to share between concurrent runs.
    """

    nodes: np.ndarray
    h: np.ndarray = field(init=False)
    face_left: np.ndarray = field(init=False)
    face_right: np.ndarray = field(init=False)
    face_h: np.ndarray = field(init=False)
    face_x: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=float))
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("mesh needs at least two nodes")
        h = np.diff(nodes)
        if np.any(h <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "h", h)
        left = np.arange(self.n_elements - 1)
        object.__setattr__(self, "face_left", left)
        object.__setattr__(self, "face_right", left + 1)
        object.__setattr__(self, "face_h", np.minimum(h[:-1], h[1:]))
        object.__setattr__(self, "face_x", nodes[1:-1].copy())

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_faces(self) -> int:
        """Number of interior faces; boundary nodes are not faces."""
        return self.n_elements - 1

    @property
    def a(self) -> float:
        return float(self.nodes[0])

    @property
    def b(self) -> float:
        return float(self.nodes[-1])

    @property
    def domain_measure(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])

    def element_interval(self, e: int) -> tuple[float, float]:
        return float(self.nodes[e]), float(self.nodes[e + 1])


def build_uniform_mesh(n_el: int, a: float, b: float) -> Mesh1D:
    """Equispaced partition of (a, b) into n_el intervals."""
    if n_el < 1:
        raise ValueError(f"n_el must be >= 1, got {n_el}")
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    return Mesh1D(np.linspace(a, b, n_el + 1))


def build_graded_mesh(node_list) -> Mesh1D:
    """Partition from an explicit strictly increasing node list."""
    return Mesh1D(np.asarray(node_list, dtype=float))
