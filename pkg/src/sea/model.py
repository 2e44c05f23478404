"""Parameters and the forward pass: projection, propagation, splitting, fusion, scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import TrainConfig
from .data import FeatureMatrix, InteractionDataset
from .graphs import SparseGraph, build_item_graph, build_normalized_bipartite, propagate_item_graph
from .objectives import VariationalEstimator, xavier_uniform

MAIN_TENSORS = (
    "user_emb_visual",
    "user_emb_textual",
    "proj_visual",
    "proj_textual",
    "w_s_logit",
    "gate_t_logit",
    "gate_v_logit",
)


@dataclass
class ParameterSet:
    user_emb_visual: torch.Tensor
    user_emb_textual: torch.Tensor
    proj_visual: torch.Tensor
    proj_textual: torch.Tensor
    w_s_logit: torch.Tensor
    gate_t_logit: torch.Tensor
    gate_v_logit: torch.Tensor
    club_visual: VariationalEstimator
    club_textual: VariationalEstimator

    def main(self) -> list[torch.Tensor]:
        return [getattr(self, name) for name in MAIN_TENSORS]

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {name: getattr(self, name) for name in MAIN_TENSORS}
        for tag, est in (("club_visual", self.club_visual), ("club_textual", self.club_textual)):
            for key, val in est.state_dict().items():
                out[f"{tag}.{key}"] = val
        return out

    def load_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name in MAIN_TENSORS:
                getattr(self, name).copy_(tensors[name])
            for tag in ("club_visual", "club_textual"):
                est = getattr(self, tag)
                est.load_state_dict({k[len(tag) + 1:]: v for k, v in tensors.items() if k.startswith(tag + ".")})

    def clone(self) -> "ParameterSet":
        other = init_parameters(_shape_config(self), self.proj_visual.shape[0], self.proj_textual.shape[0],
                                self.user_emb_visual.shape[0], np.random.default_rng(0))
        other.load_tensors({k: v.detach() for k, v in self.named_tensors().items()})
        return other

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(t).all()) for t in self.named_tensors().values())


def _shape_config(params: ParameterSet) -> TrainConfig:
    return TrainConfig(d=params.user_emb_visual.shape[1])


def init_parameters(config: TrainConfig, d_v: int, d_t: int, n_users: int, rng: np.random.Generator) -> ParameterSet:
    """Xavier-uniform matrices, zero gate logits, fresh CLUB estimators."""
    d = config.d
    if d % 2:
        raise ValueError(f"embedding dim d must be even, got {d}")

    def mat(shape):
        return torch.from_numpy(xavier_uniform(shape, rng)).requires_grad_(True)

    def scalar():
        return torch.zeros((), dtype=torch.float64, requires_grad=True)

    user_v = mat((n_users, d))
    user_t = user_v.detach().clone().requires_grad_(True) if config.shared_user_init else mat((n_users, d))
    return ParameterSet(
        user_emb_visual=user_v,
        user_emb_textual=user_t,
        proj_visual=mat((d_v, d)),
        proj_textual=mat((d_t, d)),
        w_s_logit=scalar(),
        gate_t_logit=scalar(),
        gate_v_logit=scalar(),
        club_visual=VariationalEstimator(d // 2, d // 2, d, rng=rng),
        club_textual=VariationalEstimator(d // 2, d // 2, d, rng=rng),
    )


@dataclass(frozen=True)
class Graphs:
    """Frozen graph structure shared by every forward pass."""

    user_item: SparseGraph
    item_user: SparseGraph
    item_visual: SparseGraph
    item_textual: SparseGraph

    @classmethod
    def build(cls, ds: InteractionDataset, visual: FeatureMatrix, textual: FeatureMatrix, knn_k: int) -> "Graphs":
        ui, iu = build_normalized_bipartite(ds)
        return cls(ui, iu, build_item_graph(visual, knn_k), build_item_graph(textual, knn_k))


@dataclass
class ModalSplit:
    generic: torch.Tensor
    unique: torch.Tensor

    @classmethod
    def of(cls, emb) -> "ModalSplit":
        half = emb.shape[1] // 2
        if emb.shape[1] % 2:
            raise ValueError("modal embedding width must be even")
        return cls(emb[:, :half], emb[:, half:])

    def join(self):
        if isinstance(self.generic, torch.Tensor):
            return torch.cat([self.generic, self.unique], dim=1)
        return np.concatenate([self.generic, self.unique], axis=1)


def propagate_bipartite(graphs: tuple[SparseGraph, SparseGraph], user_emb, item_emb, K: int,
                        include_layer0: bool = False):
    """LightGCN-style propagation; returns the sum of layers 1..K (plus layer 0 if asked)."""
    ui, iu = graphs
    if K < 1:
        raise ValueError("K must be >= 1")
    if user_emb.shape[0] != ui.n_rows or item_emb.shape[0] != ui.n_cols:
        raise ValueError(f"embeddings {tuple(user_emb.shape)}, {tuple(item_emb.shape)} do not fit graph {ui.shape}")
    if user_emb.shape[1] != item_emb.shape[1]:
        raise ValueError("user and item embeddings differ in width")
    u, i = user_emb, item_emb
    su = user_emb if include_layer0 else 0 * user_emb
    si = item_emb if include_layer0 else 0 * item_emb
    for _ in range(K):
        u, i = ui @ i, iu @ u
        su = su + u
        si = si + i
    return su, si


def _cat(parts):
    if isinstance(parts[0], torch.Tensor):
        return torch.cat(parts, dim=1)
    return np.concatenate(parts, axis=1)


def fuse_item(split_t: ModalSplit, split_v: ModalSplit, H):
    """[unique_t | generic_t | unique_v | generic_v] + H."""
    parts = [split_t.unique, split_t.generic, split_v.unique, split_v.generic]
    width = sum(p.shape[1] for p in parts)
    if H.shape[1] != width or H.shape[0] != parts[0].shape[0]:
        raise ValueError(f"H has shape {tuple(H.shape)}, fused item width is {width}")
    return _cat(parts) + H


def fuse_user(E_u_t, E_u_v, gate_t, gate_v):
    return _cat([gate_t * E_u_t, gate_v * E_u_v])


def score(E_u, E_i, u: int, i: int) -> float:
    if not 0 <= u < E_u.shape[0] or not 0 <= i < E_i.shape[0]:
        raise IndexError(f"score index out of range: user {u}, item {i}")
    return float((E_u[u] * E_i[i]).sum())


@dataclass
class Forward:
    user: torch.Tensor
    item: torch.Tensor
    split_v: ModalSplit
    split_t: ModalSplit


def forward(params: ParameterSet, graphs: Graphs, visual: torch.Tensor, textual: torch.Tensor,
            config: TrainConfig) -> Forward:
    bip = (graphs.user_item, graphs.item_user)
    item_v0 = visual @ params.proj_visual
    item_t0 = textual @ params.proj_textual
    user_v, item_v = propagate_bipartite(bip, params.user_emb_visual, item_v0, config.gcn_layers,
                                         config.include_layer0)
    user_t, item_t = propagate_bipartite(bip, params.user_emb_textual, item_t0, config.gcn_layers,
                                         config.include_layer0)
    H0 = torch.cat([item_v, item_t], dim=1)
    H = propagate_item_graph(graphs.item_visual, graphs.item_textual, torch.sigmoid(params.w_s_logit),
                             H0, config.ii_layers)
    split_v, split_t = ModalSplit.of(item_v), ModalSplit.of(item_t)
    item = fuse_item(split_t, split_v, H)
    user = fuse_user(user_t, user_v, torch.sigmoid(params.gate_t_logit), torch.sigmoid(params.gate_v_logit))
    return Forward(user, item, split_v, split_t)


def as_tensor(features: FeatureMatrix | np.ndarray) -> torch.Tensor:
    data = features.data if isinstance(features, FeatureMatrix) else features
    return torch.from_numpy(np.ascontiguousarray(data, dtype=np.float64))
