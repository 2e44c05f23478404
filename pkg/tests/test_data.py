import logging
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sea import data as D


def write_csv(tmp_path, text, name="inter.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# ---------------------------------------------------------------- interactions


def test_load_reindexes_in_first_appearance_order(tmp_path):
    p = write_csv(tmp_path, "user_id,item_id\nalice,x\nbob,y\nalice,y\n")
    ds = D.load_interactions(p)
    assert ds.user_ids == ["alice", "bob"]
    assert ds.item_ids == ["x", "y"]
    assert ds.users.tolist() == [0, 1, 0]
    assert ds.items.tolist() == [0, 1, 1]


def test_load_drops_duplicates_with_warning(tmp_path, caplog):
    p = write_csv(tmp_path, "user_id,item_id\na,x\na,x\nb,x\n")
    with caplog.at_level(logging.WARNING):
        ds = D.load_interactions(p)
    assert len(ds) == 2 and ds.n_duplicates == 1
    assert "duplicate" in caplog.text


def test_load_empty_file_errors(tmp_path):
    with pytest.raises(D.ParseError):
        D.load_interactions(write_csv(tmp_path, ""))


def test_load_malformed_row_reports_line(tmp_path):
    p = write_csv(tmp_path, "user_id,item_id\na,x\nb\n")
    with pytest.raises(D.ParseError) as info:
        D.load_interactions(p)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_load_wrong_header(tmp_path):
    with pytest.raises(D.ParseError):
        D.load_interactions(write_csv(tmp_path, "u,i\na,x\n"))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcdef"), st.sampled_from(["p", "q", "r", "s1"])), min_size=1, max_size=30))
def test_reindex_is_bijection(tmp_path_factory, pairs):
    tmp = tmp_path_factory.mktemp("bij")
    p = write_csv(tmp, "user_id,item_id\n" + "".join(f"{u},{i}\n" for u, i in pairs))
    ds = D.load_interactions(p)
    for uid in set(u for u, _ in pairs):
        assert ds.user_ids[ds.user_index(uid)] == uid
    for k, iid in enumerate(ds.item_ids):
        assert ds.item_index(iid) == k
    decoded = {(ds.user_ids[u], ds.item_ids[i]) for u, i in zip(ds.users, ds.items)}
    assert decoded == set(pairs)


# --------------------------------------------------------------------- features


def test_seaf_layout_and_round_trip(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    D.write_matrix(tmp_path / "f.seaf", x)
    raw = (tmp_path / "f.seaf").read_bytes()
    assert raw[:4] == b"SEAF"
    assert struct.unpack("<II", raw[4:12]) == (2, 3)
    assert np.frombuffer(raw[12:], "<f4").tolist() == x.ravel().tolist()
    np.testing.assert_array_equal(D.read_matrix(tmp_path / "f.seaf"), x.astype(np.float64))


def test_feature_csv_fallback(tmp_path):
    (tmp_path / "f.csv").write_text("1,2\n3,4.5\n")
    np.testing.assert_array_equal(D.read_matrix(tmp_path / "f.csv"), [[1, 2], [3, 4.5]])


def test_truncated_seaf_errors(tmp_path):
    D.write_matrix(tmp_path / "f.seaf", np.ones((3, 3)))
    raw = (tmp_path / "f.seaf").read_bytes()
    (tmp_path / "f.seaf").write_bytes(raw[:-4])
    with pytest.raises(D.ParseError):
        D.read_matrix(tmp_path / "f.seaf")


def test_feature_row_count_mismatch(tmp_path):
    D.write_matrix(tmp_path / "f.seaf", np.ones((3, 2)))
    with pytest.raises(ValueError):
        D.load_features(tmp_path / "f.seaf", "visual", n_items=4)


def test_nonfinite_features_rejected():
    with pytest.raises(ValueError):
        D.FeatureMatrix("visual", np.array([[1.0, np.nan]]))


def test_align_items_uses_integer_ids_as_rows():
    ds = D.InteractionDataset(2, 2, [0, 1], [0, 1], [0, 0], ["a", "b"], ["4", "1"])
    out = D.align_items(ds, 5)
    assert out.n_items == 5
    assert out.items.tolist() == [4, 1]


def test_align_items_non_integer_ids_need_matching_rows():
    ds = D.InteractionDataset(1, 2, [0, 0], [0, 1], [0, 0], ["a"], ["x", "y"])
    assert D.align_items(ds, 2) is ds
    with pytest.raises(ValueError):
        D.align_items(ds, 3)


# ------------------------------------------------------------------------ split


def _one_user(n):
    return D.InteractionDataset(1, n, np.zeros(n), np.arange(n), np.zeros(n))


def test_split_ten_interactions_is_8_1_1():
    s = D.split_dataset(_one_user(10), seed=0).split
    assert np.bincount(s, minlength=3).tolist() == [8, 1, 1]


def test_split_two_interactions_all_train(caplog):
    with caplog.at_level(logging.WARNING):
        s = D.split_dataset(_one_user(2), seed=0).split
    assert s.tolist() == [0, 0]
    assert "< 3" in caplog.text


def test_split_is_deterministic():
    ds, _, _ = D.generate_synthetic(30, 100, 3, 0.1, seed=1)
    a = D.split_dataset(ds, 7).split
    b = D.split_dataset(ds, 7).split
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, D.split_dataset(ds, 8).split)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31))
def test_split_proportions(n, seed):
    s = D.split_dataset(_one_user(n), seed).split
    counts = np.bincount(s, minlength=3)
    hold = n // 10 if n >= 3 else 0
    assert counts[1] == counts[2] == hold
    assert counts[0] >= 1 and counts[0] >= 0.8 * n
    assert abs(counts[0] - 0.8 * n) <= max(1, 0.2 * n - 2 * hold + 1)


def test_split_file_round_trip(tmp_path):
    ds, _, _ = D.generate_synthetic(10, 20, 3, 0.1, seed=2)
    ds = D.split_dataset(ds, 0)
    D.save_split(ds, tmp_path / "s.csv")
    back = D.load_split(tmp_path / "s.csv", ds)
    np.testing.assert_array_equal(back.split, ds.split)
    np.testing.assert_array_equal(back.items, ds.items)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "user_index,item_index,split"


def test_id_map_joins_back(tmp_path):
    ds, _, _ = D.generate_synthetic(4, 6, 2, 0.1, seed=0)
    D.save_id_map(ds, tmp_path / "ids.csv")
    lines = (tmp_path / "ids.csv").read_text().splitlines()
    assert lines[0] == "kind,index,id"
    assert len(lines) == 1 + ds.n_users + ds.n_items


# --------------------------------------------------------------------- sampling


def test_forced_negative():
    ds = D.InteractionDataset(1, 2, [0], [0], [0])
    t = D.sample_bpr_triplets(ds, 50, np.random.default_rng(0))
    assert set(t[:, 2].tolist()) == {1}


def test_batch_size_contract():
    ds, _, _ = D.generate_synthetic(20, 30, 3, 0.1, seed=0)
    t = D.sample_bpr_triplets(ds, 256, np.random.default_rng(0))
    assert t.shape == (256, 3)


def test_negative_never_a_train_item():
    ds, _, _ = D.generate_synthetic(15, 12, 3, 0.1, seed=4, density=0.5)
    ds = D.split_dataset(ds, 0)
    train = ds.user_items(D.TRAIN)
    t = D.sample_bpr_triplets(ds, 5000, np.random.default_rng(1))
    for u, i, j in t.tolist():
        assert i in train[u]
        assert j not in train[u]


def test_negatives_uniform_chi2():
    # one user owns item 0; negatives should be uniform over the other 9
    ds = D.InteractionDataset(1, 10, [0], [0], [0])
    t = D.sample_bpr_triplets(ds, 100_000, np.random.default_rng(0))
    counts = np.bincount(t[:, 2], minlength=10)[1:]
    assert stats.chisquare(counts).pvalue > 0.01


def test_positives_uniform_over_train_pairs():
    ds = D.InteractionDataset(2, 6, [0, 0, 1], [0, 1, 2], [0, 0, 0])
    t = D.sample_bpr_triplets(ds, 30_000, np.random.default_rng(0))
    counts = np.bincount(t[:, 1], minlength=3)[:3]
    assert stats.chisquare(counts).pvalue > 0.01


def test_saturated_user_is_skipped(caplog):
    # user 0 owns every item, user 1 does not
    ds = D.InteractionDataset(2, 3, [0, 0, 0, 1], [0, 1, 2, 0], [0, 0, 0, 0])
    sampler = D.TripletSampler(ds)
    with caplog.at_level(logging.WARNING):
        t = sampler.sample(64, np.random.default_rng(0))
    assert len(t) == 64
    assert set(t[:, 0].tolist()) == {1}
    assert sampler.n_skipped > 0


def test_all_users_saturated_errors():
    ds = D.InteractionDataset(1, 2, [0, 0], [0, 1], [0, 0])
    with pytest.raises(ValueError):
        D.TripletSampler(ds)


# -------------------------------------------------------------------- synthetic


def test_synthetic_is_byte_identical():
    a = D.generate_synthetic(50, 40, 4, 0.1, seed=9)
    b = D.generate_synthetic(50, 40, 4, 0.1, seed=9)
    assert a[0].users.tobytes() == b[0].users.tobytes()
    assert a[0].items.tobytes() == b[0].items.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()
    assert a[2].data.tobytes() == b[2].data.tobytes()


def test_synthetic_shared_block_has_unit_canonical_correlation():
    # noise=0: both modalities are linear maps of [Z | P_m], so their column
    # spaces share exactly latent_dim directions (canonical correlation 1)
    latent, private = 4, 2
    _, vis, txt = D.generate_synthetic(30, 300, latent, 0.0, seed=5, private_dim=private,
                                       visual_dim=8, textual_dim=8)

    def basis(x):
        x = x - x.mean(0)
        u, s, _ = np.linalg.svd(x, full_matrices=False)
        return u[:, s > 1e-9 * s[0]]

    cc = np.linalg.svd(basis(vis.data).T @ basis(txt.data), compute_uv=False)
    np.testing.assert_allclose(cc[:latent], 1.0, atol=1e-8)
    assert cc[latent] < 0.5


def test_synthetic_noise_breaks_exact_correlation():
    _, vis, txt = D.generate_synthetic(30, 300, 4, 0.5, seed=5, visual_dim=8, textual_dim=8)
    qv, _ = np.linalg.qr(vis.data - vis.data.mean(0))
    qt, _ = np.linalg.qr(txt.data - txt.data.mean(0))
    assert np.linalg.svd(qv.T @ qt, compute_uv=False)[0] < 1 - 1e-6


def test_synthetic_each_user_has_min_three():
    ds, _, _ = D.generate_synthetic(200, 100, 8, 0.1, seed=0)
    assert np.bincount(ds.users).min() >= 3
    ds.validate()


def test_synthetic_rejects_small_latent():
    with pytest.raises(ValueError):
        D.generate_synthetic(5, 5, 1, 0.1, 0)
