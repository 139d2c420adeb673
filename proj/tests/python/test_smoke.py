import math

import numpy as np
import pytest

import gefl

SMALL = """
method = gefl
t_ka = 2
t_tn = 2
t_g = 1
t_r = 1
clients = 4
archs = 2
n_per_class = 60
test_per_class = 20
fraction = 0.5
gen_hidden = 16
"""


def test_normalize_config_round_trips():
    text = gefl.normalize_config(SMALL)
    assert "alpha = 0.1" in text
    assert gefl.normalize_config(text) == text


def test_bad_config_raises():
    with pytest.raises(gefl.ConfigError, match="line 1"):
        gefl.normalize_config("alpha = -1")


def test_run_seed_is_deterministic():
    a = gefl.run_seed(SMALL, 5)
    b = gefl.run_seed(SMALL, 5)
    assert a["schema_version"] == gefl.REPORT_SCHEMA_VERSION
    assert a["trace"] == b["trace"]
    assert a["final"]["mean_accuracy"] == a["trace"][-1]["accuracy"]
    assert 0.0 <= a["final"]["mean_accuracy"] <= 1.0


def test_run_and_report(tmp_path):
    for seed in (1, 2):
        artifacts = gefl.run_and_write(SMALL, seed, str(tmp_path))
        assert artifacts["trace"] == f"trace_seed{seed}.csv"
    header = (tmp_path / "trace_seed1.csv").read_text().splitlines()[0]
    assert header == gefl.TRACE_HEADER
    summary = gefl.report(str(tmp_path))
    assert summary["mean_accuracy"]["n"] == 2
    x = gefl.sample(str(tmp_path / "gen_seed1.ckpt"), [0, 1, 2], seed=3)
    assert x.shape == (3, 8)


def test_datasets_and_aggregate():
    x, y = gefl.make_blobs(3, 4, 10, 1.0, 0)
    assert x.shape == (30, 4) and y.shape == (30,)
    assert set(y.tolist()) == {0, 1, 2}
    g, _ = gefl.make_glyphs(2, 8, 3, 0.1, 1, 0)
    assert g.min() >= 0.0 and g.max() <= 1.0
    assert gefl.aggregate([[1.0, 2.0], [3.0, 4.0]]) == [2.0, 3.0]


def test_mnd_identity():
    rng = np.random.default_rng(0)
    p, s = rng.normal(size=(10, 3)), rng.normal(size=(7, 3))
    assert gefl.mnd_ratio(p, s, s)["mean_ratio"] == 1.0
    with pytest.raises(gefl.DomainError):
        gefl.mnd_ratio(p, s, rng.normal(size=(6, 3)))


def test_invert_identity_extractor(tmp_path):
    path = tmp_path / "fe.ckpt"
    values = "\n".join(str(v) for v in [1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
    path.write_text(f"gefl-checkpoint 1\nkind network\nnetwork net 1 dense:2:2\nparams 6\n{values}\n")
    x, residual = gefl.invert_feature(str(path), [0.25, 0.75], steps=200, lr=0.2, tv_weight=0.0)
    assert math.isclose(x[0, 0], 0.25, abs_tol=1e-6)
    assert math.isclose(x[0, 1], 0.75, abs_tol=1e-6)
    assert residual < 1e-10
