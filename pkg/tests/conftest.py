from pathlib import Path

import numpy as np
import pytest

from sea import data as D
from sea.config import TrainConfig
from sea.model import Graphs


@pytest.fixture
def tiny():
    """12 users, 10 items, split and graphs ready; d=8 keeps finite differences cheap."""
    ds, vis, txt = D.generate_synthetic(12, 10, 2, 0.1, seed=3, visual_dim=6, textual_dim=5, density=0.4)
    ds = D.split_dataset(ds, 0)
    cfg = TrainConfig(d=8, knn_k=3, batch_size=16, lr=1e-2)
    return ds, vis, txt, cfg, Graphs.build(ds, vis, txt, cfg.knn_k)


def write_fixture(root: Path, n_users=60, n_items=40, seed=0, max_epochs=3) -> dict[str, str]:
    """Synthetic interaction/feature files plus a small config, as the CLI expects them."""
    ds, vis, txt = D.generate_synthetic(n_users, n_items, 4, 0.1, seed, visual_dim=12, textual_dim=10)
    paths = {
        "interactions": str(root / "inter.csv"),
        "visual": str(root / "visual.seaf"),
        "textual": str(root / "textual.seaf"),
        "config": str(root / "cfg.toml"),
    }
    D.save_interactions(ds, paths["interactions"])
    D.write_matrix(paths["visual"], vis.data)
    D.write_matrix(paths["textual"], txt.data)
    Path(paths["config"]).write_text(f"d = 16\nmax_epochs = {max_epochs}\nbatch_size = 256\nlr = 0.01\n")
    return paths


@pytest.fixture
def fixture_files(tmp_path):
    return write_fixture(tmp_path)


def rng(seed=0):
    return np.random.default_rng(seed)
