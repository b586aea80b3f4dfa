import struct

import numpy as np
import pytest

from grtm import io as gio
from grtm.errors import FormatError
from grtm.evaluation import evaluate, evaluation_universe, split_links
from grtm.generator import GenConfig, sample_corpus
from grtm.inference import FitConfig, fit
from grtm.model import Corpus, Hyperparams, LinkSet


@pytest.fixture(scope="module")
def fitted():
    corpus, links, _ = sample_corpus(GenConfig(N=10, images_per_user=(3, 7), K=3, D=4, nu_true=-1.0, seed=2))
    model = fit(corpus, links, FitConfig(Hyperparams(K=3, max_iters=8)))
    return corpus, links, model


def test_features_binary_roundtrip(tmp_path):
    corpus = Corpus([np.array([[0.1, 0.2]]), np.array([[1e-300, -3.5]])])
    gio.save_features(corpus, tmp_path / "f.bin")
    back = gio.load_features(tmp_path / "f.bin")
    assert back.n_users == 2 and back.dim == 2
    assert back == corpus


def test_features_csv_equals_binary(tmp_path):
    rng = np.random.default_rng(0)
    corpus = Corpus([rng.normal(size=(3, 4)), np.zeros((0, 4)), rng.normal(size=(2, 4))], dim=4)
    # CSV cannot express empty users, so compare a corpus without one.
    corpus = Corpus([corpus.users[0].images, corpus.users[2].images])
    gio.save_features(corpus, tmp_path / "f.bin")
    gio.save_features(corpus, tmp_path / "f.csv", fmt="csv")
    assert gio.load_features(tmp_path / "f.csv") == gio.load_features(tmp_path / "f.bin")
    assert not (tmp_path / "f.csv.idmap").exists()


def test_features_empty_user_roundtrip(tmp_path):
    corpus = Corpus([np.ones((2, 3)), np.zeros((0, 3))], dim=3)
    gio.save_features(corpus, tmp_path / "f.bin")
    back = gio.load_features(tmp_path / "f.bin")
    assert back.counts.tolist() == [2, 0]


def test_csv_reindexing_writes_idmap(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("user_id,f0,f1\n17,1.0,2.0\n5,0.5,0.5\n17,3.0,4.0\n")
    corpus = gio.load_features(path)
    assert corpus.counts.tolist() == [1, 2]
    assert (tmp_path / "f.csv.idmap").read_text() == "0 5\n1 17\n"


def test_truncated_binary_names_byte_counts(tmp_path):
    corpus = Corpus([np.ones((2, 3))])
    gio.save_features(corpus, tmp_path / "f.bin")
    raw = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-5])
    with pytest.raises(FormatError, match=f"expected {len(raw)} bytes, got {len(raw) - 5}"):
        gio.load_features(tmp_path / "t.bin")


BAD_FEATURES = {
    "magic": b"\x00\x01\x02garbage-bytes\x00",
    "short_header": b"GRTMFEAT\x01\x00",
    "version": b"GRTMFEAT" + struct.pack("<III", 9, 1, 1) + struct.pack("<I", 0),
    "zero_dim": b"GRTMFEAT" + struct.pack("<III", 1, 1, 0) + struct.pack("<I", 0),
    "nan": b"GRTMFEAT" + struct.pack("<III", 1, 1, 1) + struct.pack("<I", 1) + struct.pack("<d", float("nan")),
    "trailing": b"GRTMFEAT" + struct.pack("<III", 1, 1, 1) + struct.pack("<I", 0) + b"\x00" * 8,
    "csv_ragged": b"0,1.0,2.0\n1,3.0\n",
    "csv_token": b"0,1.0,abc\n",
    "csv_user": b"x,1.0\n",
    "csv_nan": b"0,nan\n",
    "csv_empty": b"# nothing\n",
    "csv_binary": b"0,1.0\n\xff\xfe\n",
}


@pytest.mark.parametrize("name", sorted(BAD_FEATURES))
def test_malformed_features_give_positioned_errors(tmp_path, name):
    path = tmp_path / "bad"
    path.write_bytes(BAD_FEATURES[name])
    with pytest.raises(FormatError) as info:
        gio.load_features(path)
    assert info.value.position is not None


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        gio.load_features(tmp_path / "absent")
    with pytest.raises(FormatError):
        gio.load_links(tmp_path / "absent")
    with pytest.raises(FormatError):
        gio.load_model(tmp_path / "absent")


def test_links_parsing(tmp_path):
    path = tmp_path / "l.txt"
    path.write_text("# header\n0 1\n1 0   # same edge\n\n2 3\n")
    assert gio.load_links(path) == LinkSet([(0, 1), (2, 3)])
    path.write_text("")
    assert len(gio.load_links(path)) == 0


@pytest.mark.parametrize(
    "text,line", [("0 1\n2 2\n", "line 2"), ("0 x\n", "line 1"), ("0 1 2\n", "line 1"), ("\n\n-1 3\n", "line 3")]
)
def test_bad_links(tmp_path, text, line):
    path = tmp_path / "l.txt"
    path.write_text(text)
    with pytest.raises(FormatError) as info:
        gio.load_links(path)
    assert info.value.position == line


def test_links_roundtrip(tmp_path):
    links = LinkSet([(4, 2), (0, 1), (1, 3)])
    gio.save_links(links, tmp_path / "l.txt", header="three edges")
    assert gio.load_links(tmp_path / "l.txt") == links


def _assert_models_equal(a, b, with_phi=True):
    assert a.hyperparams == b.hyperparams
    assert np.array_equal(a.topic_params.means, b.topic_params.means)
    for ca, cb in zip(a.topic_params.covariances, b.topic_params.covariances):
        assert ca.kind == cb.kind and np.array_equal(ca.values, cb.values)
    assert np.array_equal(a.link_model.eta, b.link_model.eta)
    assert a.link_model.nu == b.link_model.nu
    assert np.array_equal(a.variational_state.gamma, b.variational_state.gamma)
    assert np.array_equal(a.variational_state.phibar(), b.variational_state.phibar())
    assert a.elbo_trace == b.elbo_trace
    assert a.train_links == b.train_links
    if with_phi:
        assert all(np.array_equal(x, y) for x, y in zip(a.variational_state.phi, b.variational_state.phi))


def test_model_roundtrip_bit_exact(tmp_path, fitted):
    _, _, model = fitted
    gio.save_model(model, tmp_path / "m.grtm")
    back = gio.load_model(tmp_path / "m.grtm")
    _assert_models_equal(model, back)
    gio.save_model(back, tmp_path / "m2.grtm")
    assert (tmp_path / "m.grtm").read_bytes() == (tmp_path / "m2.grtm").read_bytes()


def test_model_without_phi(tmp_path, fitted):
    _, _, model = fitted
    gio.save_model(model, tmp_path / "m.grtm", include_phi=False)
    back = gio.load_model(tmp_path / "m.grtm")
    assert back.variational_state.phi is None
    _assert_models_equal(model, back, with_phi=False)


def test_model_full_covariance_roundtrip(tmp_path, fitted):
    corpus, links, _ = fitted
    model = fit(corpus, links, FitConfig(Hyperparams(K=3, cov_kind="full", max_iters=3)))
    gio.save_model(model, tmp_path / "m.grtm")
    _assert_models_equal(model, gio.load_model(tmp_path / "m.grtm"))


def test_model_corrupt_magic_and_version(tmp_path, fitted):
    _, _, model = fitted
    gio.save_model(model, tmp_path / "m.grtm")
    raw = bytearray((tmp_path / "m.grtm").read_bytes())
    bad = bytearray(raw)
    bad[0:4] = b"XXXX"
    (tmp_path / "bad").write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="magic"):
        gio.load_model(tmp_path / "bad")
    bad = bytearray(raw)
    bad[8:12] = struct.pack("<I", 7)
    (tmp_path / "bad").write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="version 7 .* version 1"):
        gio.load_model(tmp_path / "bad")


@pytest.mark.parametrize("cut", [3, 12, 40, -9])
def test_model_truncated(tmp_path, fitted, cut):
    _, _, model = fitted
    gio.save_model(model, tmp_path / "m.grtm")
    raw = (tmp_path / "m.grtm").read_bytes()
    (tmp_path / "bad").write_bytes(raw[:cut])
    with pytest.raises(FormatError):
        gio.load_model(tmp_path / "bad")


def test_model_garbled_header(tmp_path, fitted):
    _, _, model = fitted
    gio.save_model(model, tmp_path / "m.grtm")
    raw = bytearray((tmp_path / "m.grtm").read_bytes())
    raw[20:30] = b"}}}}}}}}}}"
    (tmp_path / "bad").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="header"):
        gio.load_model(tmp_path / "bad")


def test_export_report(tmp_path, fitted):
    from grtm.linkpredict import score_pairs

    corpus, links, model = fitted
    split = split_links(links, 0.6, 0)
    universe = evaluation_universe(corpus.n_users, split.train)
    scores = dict(zip(universe, score_pairs(model.variational_state.phibar(), model.link_model, universe)))
    report = evaluate(scores, split, corpus.n_users)
    paths = gio.export_report(report, tmp_path / "out")
    roc = paths["roc.csv"].read_text().splitlines()
    assert roc[0] == "threshold,fpr,tpr" and len(roc) == len(report.roc_points) + 1
    assert paths["pr.csv"].read_text().splitlines()[0] == "threshold,recall,precision"
    summary = dict(line.split("=", 1) for line in paths["summary.txt"].read_text().splitlines())
    assert float(summary["roc_auc"]) == report.roc_auc
    assert float(summary["precision_at_recall_0.10"]) == report.precision_at[0.1]
    # Re-export overwrites in place and leaves no temporary files behind.
    gio.export_report(report, tmp_path / "out")
    assert sorted(p.name for p in (tmp_path / "out").iterdir()) == ["pr.csv", "roc.csv", "summary.txt"]


def test_export_three_point_roc(tmp_path):
    from grtm.evaluation import Curve, EvalReport

    roc = Curve(np.array([np.inf, 0.5, 0.1]), np.array([0.0, 0.5, 1.0]), np.array([0.0, 1.0, 1.0]), 0.75)
    pr = Curve(np.array([0.5, 0.5, 0.1]), np.array([0.0, 1.0, 1.0]), np.array([1.0, 1.0, 0.5]), 0.9)
    paths = gio.export_report(EvalReport(roc, pr, {0.1: 1.0}), tmp_path)
    assert len(paths["roc.csv"].read_text().splitlines()) == 4


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    from grtm.evaluation import Curve, EvalReport

    c = Curve(np.array([1.0]), np.array([0.0]), np.array([0.0]), 0.0)
    with pytest.raises(OSError):
        gio.export_report(EvalReport(c, c), blocker / "sub")
