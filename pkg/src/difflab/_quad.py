"""Composite Simpson nodes and weights shared by the loss integrators."""

import numpy as np


def simpson(a, b, nodes):
    nodes = int(nodes)
    if nodes < 3 or nodes % 2 == 0:
        raise ValueError("Simpson needs an odd node count >= 3")
    t = np.linspace(a, b, nodes)
    w = np.ones(nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return t, w * (b - a) / (3.0 * (nodes - 1))
