"""Two-pass connected-component labeling with union-find."""

from __future__ import annotations

import numpy as np


class UnionFind:
    def __init__(self):
        self.parent: list[int] = [0]

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        # smaller label wins so roots are deterministic
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return ra


def label(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label the connected foreground regions of a boolean mask.

    Labels are 1..n, numbered in row-major order of each region's first
    pixel; background is 0.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    h, w = mask.shape
    labels = np.zeros((h + 1, w + 2), dtype=np.int64)  # guard row above, guard columns
    uf = UnionFind()
    rows, cols = np.nonzero(mask)
    if connectivity == 8:
        offsets = ((-1, -1), (-1, 0), (-1, 1), (0, -1))
    else:
        offsets = ((-1, 0), (0, -1))

    lab = labels  # local alias for the hot loop
    for r, c in zip((rows + 1).tolist(), (cols + 1).tolist()):
        best = 0
        for dr, dc in offsets:
            n = lab[r + dr, c + dc]
            if n:
                if best == 0:
                    best = n
                elif n != best:
                    best = uf.union(best, n)
        lab[r, c] = best if best else uf.make()

    out = labels[1:, 1:-1]
    if not rows.size:
        return out, 0
    roots = np.array([uf.find(i) for i in range(len(uf.parent))], dtype=np.int64)
    fg = out[rows, cols]
    root_of = roots[fg]
    # renumber roots by first appearance in row-major order
    _, first = np.unique(root_of, return_index=True)
    remap = np.zeros(len(uf.parent), dtype=np.int64)
    uniq = root_of[np.sort(first)]
    remap[uniq] = np.arange(1, len(uniq) + 1)
    out[rows, cols] = remap[root_of]
    return np.ascontiguousarray(out), int(len(uniq))
