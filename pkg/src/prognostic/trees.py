"""Flat storage for a sequence of binary trees grown by the kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

NODE_FIELDS = ("feature", "cut", "missing_left", "left", "right")
DTYPES = {"feature": np.int32, "cut": np.int32, "missing_left": np.int8, "left": np.int32,
          "right": np.int32}


@dataclass
class TreeTable:
    """Trees concatenated node-wise; child indices are global."""

    nodes: dict  # field -> array over all nodes
    roots: np.ndarray  # global index of each tree's root
    extra: dict  # per-node payload arrays (leaf values, leaf offsets, ...)

    @property
    def n_trees(self):
        return len(self.roots)

    @classmethod
    def from_trees(cls, trees, extra_fields=()):
        roots, offset = [], 0
        parts = {k: [] for k in NODE_FIELDS}
        extras = {k: [] for k in extra_fields}
        for tr in trees:
            roots.append(offset)
            for k in NODE_FIELDS:
                a = np.asarray(tr[k], dtype=DTYPES[k])
                if k in ("left", "right"):
                    a = np.where(a >= 0, a + offset, -1).astype(np.int32)
                parts[k].append(a)
            for k in extra_fields:
                extras[k].append(np.asarray(tr[k]))
            offset += len(tr["feature"])
        nodes = {k: np.concatenate(v) if v else np.zeros(0, DTYPES[k]) for k, v in parts.items()}
        extra = {k: np.concatenate(v) if v else np.zeros(0) for k, v in extras.items()}
        return cls(nodes, np.asarray(roots, dtype=np.int64), extra)

    def prefix(self, n_trees):
        """The first ``n_trees`` trees (their nodes form a prefix of the arrays)."""
        if n_trees >= self.n_trees:
            return self
        end = int(self.roots[n_trees])
        return TreeTable(
            {k: v[:end] for k, v in self.nodes.items()},
            self.roots[:n_trees],
            {k: v[:end] for k, v in self.extra.items()},
        )

    def apply(self, codes):
        """Terminal node per (row, tree)."""
        n = self.nodes
        return _kernels.apply_trees(
            np.ascontiguousarray(codes, dtype=np.uint8), n["feature"], n["cut"],
            n["missing_left"], n["left"], n["right"], self.roots,
        )

    def depth_of_nodes(self):
        depth = np.zeros(len(self.nodes["feature"]), dtype=np.int64)
        # children are always created after their parent
        for i in range(len(depth)):
            if self.nodes["feature"][i] >= 0:
                depth[self.nodes["left"][i]] = depth[i] + 1
                depth[self.nodes["right"][i]] = depth[i] + 1
        return depth

    def to_dict(self, lists=True):
        conv = (lambda a: a.tolist()) if lists else (lambda a: a)
        d = {k: conv(v) for k, v in self.nodes.items()}
        d["roots"] = conv(self.roots)
        d["extra"] = {k: conv(v) for k, v in self.extra.items()}
        return d

    @classmethod
    def from_dict(cls, d, extra_dtypes):
        nodes = {k: np.asarray(d[k], dtype=DTYPES[k]) for k in NODE_FIELDS}
        extra = {k: np.asarray(v, dtype=extra_dtypes[k]) for k, v in d["extra"].items()}
        return cls(nodes, np.asarray(d["roots"], dtype=np.int64), extra)
