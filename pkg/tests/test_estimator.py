import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from ncla import NCLA, L2LogisticRegression
from ncla.graph import SbmSpec, generate_sbm
from ncla.io import read_embeddings, write_embeddings
from ncla.trainer import TrainConfig, train


@pytest.fixture
def g():
    return generate_sbm(SbmSpec(2, 10, 0.6, 0.05, feature_dim=4, seed=1))


def test_get_set_params_and_clone():
    est = NCLA(n_views=3, tau=0.5)
    params = est.get_params()
    assert params["n_views"] == 3 and params["tau"] == 0.5
    assert clone(est).get_params() == params
    assert est.set_params(out_dim=8).out_dim == 8


def test_fit_transform_matches_trainer(g):
    est = NCLA(n_views=2, out_dim=4, epochs=5, random_state=3)
    H = est.fit_transform(g)
    rep = train(g, TrainConfig(n_views=2, out_dim=4, epochs=5, seed=3))
    assert H.shape == (20, 8)
    assert np.array_equal(H, rep.embeddings.concatenated)
    assert np.array_equal(est.transform(g), H)
    assert est.loss_curve_ == rep.loss_trace


def test_fit_from_matrix_and_adjacency(g):
    a = g.adjacency()
    est = NCLA(n_views=2, out_dim=3, epochs=2).fit(np.asarray(g.features), adjacency=a)
    H = est.transform(np.asarray(g.features), adjacency=a.toarray())
    assert np.array_equal(H, NCLA(n_views=2, out_dim=3, epochs=2).fit_transform(g))


def test_transform_requires_fit(g):
    with pytest.raises(NotFittedError):
        NCLA().transform(g)


def test_matrix_without_adjacency_rejected():
    with pytest.raises(ValueError):
        NCLA(epochs=1).fit(np.ones((3, 2)))


def test_embeddings_feed_classifier(g):
    H = NCLA(n_views=2, out_dim=4, epochs=20).fit_transform(g)
    clf = make_pipeline(L2LogisticRegression(alpha=1e-2)).fit(H, g.labels)
    assert clf.score(H, g.labels) > 0.5


@pytest.mark.parametrize("precision", [32, 64])
def test_embedding_file_roundtrip(tmp_path, precision):
    H = np.random.default_rng(0).standard_normal((5, 3))
    write_embeddings(tmp_path / "e.bin", H, precision, source="abc")
    back, meta = read_embeddings(tmp_path / "e.bin")
    assert meta == {"N": 5, "D": 3, "precision": precision, "byte_order": "little",
                    "layout": "row-major", "source_checkpoint_sha256": "abc"}
    dtype = np.float32 if precision == 32 else np.float64
    assert np.array_equal(back, H.astype(dtype).astype(np.float64))
    assert (tmp_path / "e.bin").stat().st_size == 15 * precision // 8


def test_embedding_file_size_mismatch(tmp_path):
    write_embeddings(tmp_path / "e.bin", np.ones((2, 2)))
    (tmp_path / "e.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(ValueError):
        read_embeddings(tmp_path / "e.bin")
