"""CSR graphs: normalized user-item bipartite graph and kNN item-item graphs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import torch

from .data import TRAIN, FeatureMatrix, InteractionDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SparseGraph:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseGraph":
        m = sp.csr_matrix((vals, (rows, cols)), shape=shape, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls.from_scipy(m)

    @classmethod
    def from_scipy(cls, m) -> "SparseGraph":
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr.astype(np.int64),
                   m.indices.astype(np.int64), m.data.copy())

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets),
                             shape=(self.n_rows, self.n_cols))

    @cached_property
    def csr_t(self) -> sp.csr_matrix:
        return self.csr.T.tocsr()

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def transpose(self) -> "SparseGraph":
        return SparseGraph.from_scipy(self.csr_t)

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def __matmul__(self, x):
        if isinstance(x, torch.Tensor):
            return _SpMM.apply(x, self)
        x = np.asarray(x)
        if x.shape[0] != self.n_cols:
            raise ValueError(f"shape mismatch: graph {self.shape} @ {x.shape}")
        return self.csr @ x

    def validate(self) -> None:
        if len(self.row_offsets) != self.n_rows + 1 or self.row_offsets[-1] != self.nnz:
            raise ValueError("row_offsets inconsistent with nnz")
        for r in range(self.n_rows):
            cols = self.col_indices[self.row_offsets[r]:self.row_offsets[r + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"row {r}: column indices not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite graph values")

    def dump_csv(self, path: str | Path) -> None:
        rows = np.repeat(np.arange(self.n_rows), self.row_degrees())
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "value"])
            for r, c, v in zip(rows.tolist(), self.col_indices.tolist(), self.values.tolist()):
                w.writerow([r, c, repr(v)])


class _SpMM(torch.autograd.Function):
    """``graph @ x`` for a constant CSR graph and a dense float64 tensor."""

    @staticmethod
    def forward(ctx, x, graph):
        if x.shape[0] != graph.n_cols:
            raise ValueError(f"shape mismatch: graph {graph.shape} @ {tuple(x.shape)}")
        ctx.graph = graph
        out = graph.csr @ x.detach().cpu().numpy()
        return torch.from_numpy(np.ascontiguousarray(out)).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        g = ctx.graph.csr_t @ grad.detach().cpu().numpy()
        return torch.from_numpy(np.ascontiguousarray(g)).to(grad.dtype), None


def build_normalized_bipartite(ds: InteractionDataset) -> tuple[SparseGraph, SparseGraph]:
    """User->item and item->user graphs weighted 1/sqrt(|N_u| |N_i|) over train edges."""
    users, items = ds.pairs(TRAIN)
    if len(users) == 0:
        raise ValueError("train split is empty")
    du = np.bincount(users, minlength=ds.n_users).astype(np.float64)
    di = np.bincount(items, minlength=ds.n_items).astype(np.float64)
    vals = 1.0 / np.sqrt(du[users] * di[items])
    ui = SparseGraph.from_coo(users, items, vals, (ds.n_users, ds.n_items))
    iu = SparseGraph.from_coo(items, users, vals, (ds.n_items, ds.n_users))
    return ui, iu


def cosine_similarity(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cosine matrix and a mask of zero-norm rows."""
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    xn = x / safe[:, None]
    return xn @ xn.T, zero


def knn_binary(features: np.ndarray, k: int) -> sp.csr_matrix:
    """Row-wise top-k of cosine similarity, self excluded, ties to the lowest index."""
    n = features.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n_items, got k={k}, n_items={n}")
    sim, zero = cosine_similarity(features)
    if zero.all():
        raise ValueError("all feature rows are zero")
    if zero.any():
        log.warning("%d items with zero-norm features left isolated", int(zero.sum()))
    sim[np.diag_indices(n)] = -np.inf
    sim[:, zero] = -np.inf
    order = np.argsort(-sim, axis=1, kind="stable")
    rows, cols = [], []
    for r in range(n):
        if zero[r]:
            continue
        cand = order[r, :k]
        cand = cand[np.isfinite(sim[r, cand])]
        rows.append(np.full(len(cand), r))
        cols.append(cand)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    m.sort_indices()
    return m


def build_item_graph(features: FeatureMatrix | np.ndarray, k: int = 10) -> SparseGraph:
    """kNN cosine item graph, binarized and normalized D_row^-1/2 S D_col^-1/2."""
    x = features.data if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    s = knn_binary(x, k).tocoo()
    d_row = np.asarray(s.sum(axis=1)).ravel()
    d_col = np.asarray(s.sum(axis=0)).ravel()
    vals = 1.0 / np.sqrt(d_row[s.row] * d_col[s.col])
    return SparseGraph.from_coo(s.row, s.col, vals, s.shape)


def propagate_item_graph(Sv: SparseGraph, St: SparseGraph, w_s, H0, n_layers: int):
    """Apply ``S = w_s Sv + (1 - w_s) St`` to ``H0`` ``n_layers`` times; returns the last layer.

    Works on numpy arrays and on torch tensors (``w_s`` may then be a tensor).
    """
    if isinstance(w_s, (int, float)) and not 0.0 <= w_s <= 1.0:
        raise ValueError("w_s must lie in [0, 1]")
    if H0.shape[0] != Sv.n_cols or H0.shape[0] != St.n_cols:
        raise ValueError(f"H0 has {H0.shape[0]} rows, graphs have {Sv.n_cols}/{St.n_cols} columns")
    h = H0
    for _ in range(n_layers):
        h = w_s * (Sv @ h) + (1 - w_s) * (St @ h)
    return h
