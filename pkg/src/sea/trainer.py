"""Alternating CLUB-likelihood / main-Adam training, early stopping, checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .data import TRAIN, VAL, FeatureMatrix, InteractionDataset, TripletSampler
from .evaluator import MetricsTable, evaluate
from .model import Forward, Graphs, ParameterSet, as_tensor, forward, init_parameters
from .objectives import (
    LossReport,
    bpr_loss,
    club_estimate,
    club_likelihood_step,
    infonce_loss,
    neg_l2_distance,
    solosim_loss,
)
from .optim import Adam

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SEAC"
CKPT_VERSION = 1


@dataclass
class Optimizers:
    main: Adam
    club_visual: Adam
    club_textual: Adam

    @classmethod
    def create(cls, params: ParameterSet, config: TrainConfig) -> "Optimizers":
        return cls(
            Adam(params.main(), lr=config.lr),
            Adam(list(params.club_visual.parameters()), lr=config.club_lr),
            Adam(list(params.club_textual.parameters()), lr=config.club_lr),
        )

    def named(self) -> dict[str, Adam]:
        return {"main": self.main, "club_visual": self.club_visual, "club_textual": self.club_textual}


def batch_items(batch: np.ndarray) -> np.ndarray:
    """Deduplicated positive items of a BPR batch; the alignment/distancing batch."""
    return np.unique(np.asarray(batch)[:, 1])


def compute_losses(fwd: Forward, params: ParameterSet, batch: np.ndarray, config: TrainConfig,
                   bpr_only: bool = False) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    bpr = bpr_loss(fwd.user, fwd.item, batch)
    if bpr_only:
        zero = torch.zeros((), dtype=torch.float64)
        return bpr, {"bpr": bpr, "align": zero, "dis_visual": zero, "dis_textual": zero}
    idx = torch.as_tensor(batch_items(batch))
    gv, qv = fwd.split_v.generic[idx], fwd.split_v.unique[idx]
    gt, qt = fwd.split_t.generic[idx], fwd.split_t.unique[idx]
    align_fn = solosim_loss if config.align_loss == "solosim" else infonce_loss
    align = align_fn(gv, gt, config.tau)
    if config.dis_loss == "club":
        dis_v = club_estimate(params.club_visual, gv, qv)
        dis_t = club_estimate(params.club_textual, gt, qt)
    else:
        dis_v = neg_l2_distance(gv, qv)
        dis_t = neg_l2_distance(gt, qt)
    total = bpr + config.alpha * align + config.beta * (dis_v + dis_t)
    return total, {"bpr": bpr, "align": align, "dis_visual": dis_v, "dis_textual": dis_t}


def _check_finite(terms: dict[str, torch.Tensor]) -> None:
    for name, val in terms.items():
        if not torch.isfinite(val):
            raise FloatingPointError(f"non-finite {name} loss: {float(val.detach())}")


def train_step(params: ParameterSet, graphs: Graphs, features: tuple[torch.Tensor, torch.Tensor],
               batch: np.ndarray, config: TrainConfig, optimizers: Optimizers,
               bpr_only: bool = False) -> tuple[ParameterSet, LossReport]:
    """Phase 1: CLUB likelihood updates on detached representations.
    Phase 2: one Adam step on the total loss over the main parameters."""
    fwd = forward(params, graphs, features[0], features[1], config)

    if config.dis_loss == "club" and not bpr_only:
        idx = torch.as_tensor(batch_items(batch))
        for _ in range(config.club_inner_steps):
            club_likelihood_step(params.club_visual, fwd.split_v.generic[idx], fwd.split_v.unique[idx],
                                 config.club_lr, optimizers.club_visual)
            club_likelihood_step(params.club_textual, fwd.split_t.generic[idx], fwd.split_t.unique[idx],
                                 config.club_lr, optimizers.club_textual)

    total, terms = compute_losses(fwd, params, batch, config, bpr_only)
    _check_finite({**terms, "total": total})
    optimizers.main.zero_grad()
    main = params.main()
    grads = torch.autograd.grad(total, main)
    for p, g in zip(main, grads):
        p.grad = g
    optimizers.main.step()
    optimizers.main.zero_grad()

    report = LossReport(*(float(terms[k].detach()) for k in ("bpr", "align", "dis_visual", "dis_textual")),
                        total=float(total.detach()))
    return params, report


# ------------------------------------------------------------------- gradients


def total_loss(params, graphs, features, batch, config) -> torch.Tensor:
    fwd = forward(params, graphs, features[0], features[1], config)
    return compute_losses(fwd, params, batch, config)[0]


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(params: ParameterSet, graphs: Graphs, features, batch, config: TrainConfig,
                   eps: float = 1e-5, n_coords: int = 100, seed: int = 0) -> float:
    """Max relative error between autograd and central differences of the total loss.

    Up to ``n_coords`` random coordinates are checked in every main tensor.
    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    rng = np.random.default_rng(seed)
    main = params.main()
    loss = total_loss(params, graphs, features, batch, config)
    grads = torch.autograd.grad(loss, main)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(main, grads):
            flat_p = p.view(-1)
            flat_g = g.reshape(-1)
            n = flat_p.numel()
            coords = rng.choice(n, size=min(n_coords, n), replace=False)
            for c in coords.tolist():
                orig = flat_p[c].item()
                flat_p[c] = orig + eps
                up = float(total_loss(params, graphs, features, batch, config))
                flat_p[c] = orig - eps
                down = float(total_loss(params, graphs, features, batch, config))
                flat_p[c] = orig
                numeric = (up - down) / (2 * eps)
                worst = max(worst, relative_error(float(flat_g[c]), numeric))
    return worst


# ------------------------------------------------------------------ checkpoint


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    epoch: int
    best_metric: float
    config_digest: str
    rng_state: dict
    meta: dict = field(default_factory=dict)

    def param_tensors(self) -> dict[str, torch.Tensor]:
        return {k[len("param."):]: v for k, v in self.tensors.items() if k.startswith("param.")}


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """``SEAC`` | version byte | u64 header length | JSON header | float64 payload."""
    names = sorted(ckpt.tensors)
    entries, blobs, offset = [], [], 0
    for name in names:
        arr = np.asarray(ckpt.tensors[name].detach().cpu().numpy(), dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "epoch": ckpt.epoch,
        "best_metric": ckpt.best_metric,
        "config_digest": ckpt.config_digest,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "tensors": entries,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(bytes([CKPT_VERSION]))
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    if len(raw) < 13:
        raise CheckpointError(f"{path}: truncated header")
    if raw[4] != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {raw[4]}, expected {CKPT_VERSION}")
    (hlen,) = struct.unpack("<Q", raw[5:13])
    if len(raw) < 13 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(raw[13:13 + hlen])
    body = raw[13 + hlen:]
    if len(body) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: truncated payload ({len(body)} of {header['payload_bytes']} bytes)")
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.float64))
    return Checkpoint(tensors, header["epoch"], header["best_metric"], header["config_digest"],
                      header["rng_state"], header["meta"])


# ------------------------------------------------------------------------- fit


class Trainer:
    """Owns parameters, optimizers, the sampler stream and the per-step loss history."""

    def __init__(self, ds: InteractionDataset, visual: FeatureMatrix, textual: FeatureMatrix,
                 config: TrainConfig, graphs: Graphs | None = None):
        self.ds = ds
        self.config = config
        self.graphs = graphs if graphs is not None else Graphs.build(ds, visual, textual, config.knn_k)
        self.features = (as_tensor(visual), as_tensor(textual))
        self.rng = np.random.default_rng(config.seed)
        self.params = init_parameters(config, visual.dim, textual.dim, ds.n_users, self.rng)
        self.opts = Optimizers.create(self.params, config)
        self.sampler = TripletSampler(ds)
        self.steps: list[LossReport] = []
        self.epoch = 0
        self.best_metric = -math.inf
        self.bad_epochs = 0
        self.best_tensors: dict[str, torch.Tensor] | None = None
        self.best_epoch = 0

    @property
    def batches_per_epoch(self) -> int:
        return max(1, math.ceil(int((self.ds.split == TRAIN).sum()) / self.config.batch_size))

    def step(self, batch: np.ndarray | None = None, bpr_only: bool = False) -> LossReport:
        if batch is None:
            batch = self.sampler.sample(self.config.batch_size, self.rng)
        _, report = train_step(self.params, self.graphs, self.features, batch, self.config, self.opts, bpr_only)
        self.steps.append(report)
        return report

    @torch.no_grad()
    def embeddings(self) -> tuple[np.ndarray, np.ndarray]:
        fwd = forward(self.params, self.graphs, self.features[0], self.features[1], self.config)
        return fwd.user.numpy().copy(), fwd.item.numpy().copy()

    def evaluate(self, split: int = VAL, K=(10, 20)) -> MetricsTable:
        E_u, E_i = self.embeddings()
        return evaluate(E_u, E_i, self.ds, split, K)

    def run_epoch(self) -> float:
        losses = [self.step().total for _ in range(self.batches_per_epoch)]
        self.epoch += 1
        return float(np.mean(losses))

    def fit(self, log_path: str | Path | None = None, on_epoch=None) -> tuple[Checkpoint, list[dict]]:
        """Train until ``patience`` epochs pass without a better val Recall@20."""
        records = []
        fh = Path(log_path).open("a") if log_path else None
        t0 = time.perf_counter()
        try:
            while self.epoch < self.config.max_epochs:
                loss = self.run_epoch()
                metrics = self.evaluate(VAL)
                rec = {
                    "epoch": self.epoch,
                    "loss": loss,
                    "val_recall20": metrics.recall[20],
                    "val_ndcg20": metrics.ndcg[20],
                    "elapsed_s": round(time.perf_counter() - t0, 3),
                }
                records.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                    fh.flush()
                if metrics.recall[20] > self.best_metric:
                    self.best_metric = metrics.recall[20]
                    self.best_epoch = self.epoch
                    self.bad_epochs = 0
                    self.best_tensors = {k: v.detach().clone() for k, v in self.params.named_tensors().items()}
                else:
                    self.bad_epochs += 1
                if on_epoch is not None:
                    on_epoch(self, rec)
                if self.bad_epochs > self.config.patience:
                    break
        finally:
            if fh:
                fh.close()
        return self.best_checkpoint(), records

    # -- checkpoints

    def best_checkpoint(self) -> Checkpoint:
        tensors = self.best_tensors or {k: v.detach().clone() for k, v in self.params.named_tensors().items()}
        return Checkpoint({f"param.{k}": v for k, v in tensors.items()}, self.best_epoch, float(self.best_metric),
                          self.config.digest(), {}, {"kind": "best", "config": self.config.to_dict()})

    def state_checkpoint(self) -> Checkpoint:
        """Everything needed to resume: params, optimizer moments, rng, stopping state."""
        tensors = {f"param.{k}": v.detach().clone() for k, v in self.params.named_tensors().items()}
        steps = {}
        for tag, opt in self.opts.named().items():
            for k, v in opt.state_tensors().items():
                tensors[f"opt.{tag}.{k}"] = v.detach().clone()
            steps[tag] = opt.t
        if self.best_tensors is not None:
            for k, v in self.best_tensors.items():
                tensors[f"best.{k}"] = v
        meta = {
            "kind": "state",
            "config": self.config.to_dict(),
            "opt_steps": steps,
            "bad_epochs": self.bad_epochs,
            "best_epoch": self.best_epoch,
        }
        best = self.best_metric if math.isfinite(self.best_metric) else -1.0
        return Checkpoint(tensors, self.epoch, float(best), self.config.digest(),
                          self.rng.bit_generator.state, meta)

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.config_digest != self.config.digest():
            raise CheckpointError(f"checkpoint config digest {ckpt.config_digest} does not match "
                                  f"{self.config.digest()}")
        self.params.load_tensors(ckpt.param_tensors())
        if ckpt.meta.get("kind") != "state":
            return
        for tag, opt in self.opts.named().items():
            prefix = f"opt.{tag}."
            opt.load_state(ckpt.meta["opt_steps"][tag],
                           {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)})
        self.rng.bit_generator.state = ckpt.rng_state
        self.epoch = ckpt.epoch
        self.best_metric = ckpt.best_metric if ckpt.best_metric >= 0 else -math.inf
        self.bad_epochs = ckpt.meta["bad_epochs"]
        self.best_epoch = ckpt.meta["best_epoch"]
        best = {k[len("best."):]: v for k, v in ckpt.tensors.items() if k.startswith("best.")}
        self.best_tensors = best or None


def fit(ds: InteractionDataset, visual: FeatureMatrix, textual: FeatureMatrix, config: TrainConfig,
        log_path: str | Path | None = None) -> tuple[Checkpoint, list[dict]]:
    return Trainer(ds, visual, textual, config).fit(log_path)
