"""Build a few neighborhood graphs and poke at the edge cases.

Run with:  python3 demos/knn_playground.py
"""

import numpy as np

from lamil.graph import build_knn, validate


def show(title, graph):
    print(f"\n{title}  (n={graph.n}, k={graph.k}, self={graph.include_self})")
    for i, row in enumerate(graph.neighbors):
        print(f"  tile {i}: {row.tolist()}")


def main():
    # Three tiles on a line. Each tile's nearest other tile is obvious,
    # and the tile itself always comes first in its own row.
    line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    show("three on a line, k=2", build_knn(line, 2))

    # Unit square corner: tiles 1 and 2 are both at distance 1 from tile 0.
    # Ties go to the smaller index, so tile 1 wins the second slot.
    square = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    show("unit square, k=3", build_knn(square, 3))

    # Asking for more neighbors than exist just clamps k.
    show("k larger than the bag", build_knn(line, 16))

    # Self-loops can be dropped; with two tiles each row is the other tile.
    pair = np.array([[0.0, 0.0], [3.0, 4.0]])
    show("no self loops", build_knn(pair, 1, include_self=False))

    g = build_knn(square, 3)
    print("\nvalidate on a fresh graph:", validate(g, 4) or "clean")
    g.neighbors[1, 0] = 2  # break the self-first rule on purpose
    for msg in validate(g, 4):
        print("after corruption:", msg)


if __name__ == "__main__":
    main()
