import numpy as np
import pytest

from skelimg.core import SkeletonTopology, make_sequence


def dyadic_array(rng, shape):
    """Coordinates on a 1/1024 grid: sums and differences of these stay
    exact in float64, so bit-identity assertions are meaningful."""
    return rng.integers(-(2**20), 2**20, size=shape) / 1024.0


def random_topology(rng, max_joints=12):
    """Random labeled rooted tree with randomized child order."""
    n = int(rng.integers(2, max_joints + 1))
    labels = [int(v) for v in rng.permutation(n) + 1]
    edges = []
    for i in range(1, n):
        parent = labels[int(rng.integers(0, i))]
        edges.append((parent, labels[i]))
    rng.shuffle(edges)
    return SkeletonTopology(joint_count=n, edges=tuple(edges), root=labels[0])


def euler_tour_oracle(topology, joint=None):
    """Independent recursive Euler tour: record the node, then for each
    child record the child subtree followed by the node again."""
    if joint is None:
        joint = topology.root
    order = [joint]
    for child in topology.children(joint):
        order.extend(euler_tour_oracle(topology, child))
        order.append(joint)
    return order


def dyadic_sequence(rng, frames=6, joints=25):
    coords = dyadic_array(rng, (frames, joints, 3))
    return make_sequence(list(coords))
