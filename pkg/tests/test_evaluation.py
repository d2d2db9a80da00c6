import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebelhad import evaluation as ev


def _pairwise_auc(s, t):
    pos, neg = s[t], s[~t]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_examples():
    assert ev.auc([0.9, 0.8, 0.1], [1, 0, 0]) == 1.0
    assert ev.auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == 0.5
    assert ev.auc([0.1, 0.9], [1, 0]) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_pairwise_oracle(seed):
    r = np.random.default_rng(seed)
    s = np.round(r.uniform(size=60), 1)  # coarse rounding forces ties
    t = r.uniform(size=60) < 0.3
    assert abs(ev.auc(s, t) - _pairwise_auc(s, t)) < 1e-12


def test_auc_errors():
    with pytest.raises(ValueError):
        ev.auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        ev.auc([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        ev.auc([0.1, np.nan], [1, 0])
    with pytest.raises(ValueError):
        ev.auc([0.1, 0.2, 0.3], [1, 0])


def test_auc_monotone_invariance(rng):
    s = rng.standard_normal(200)
    t = rng.uniform(size=200) < 0.2
    base = ev.auc(s, t)
    for f in (np.exp, lambda x: 3 * x - 1, lambda x: x**3, np.arctan):
        assert ev.auc(f(s), t) == pytest.approx(base, abs=1e-15)


def test_auc_negation_complements(rng):
    s = rng.standard_normal(300)
    t = rng.uniform(size=300) < 0.1
    assert ev.auc(s, t) + ev.auc(-s, t) == pytest.approx(1.0, abs=1e-12)


def test_roc_examples():
    c = ev.roc([0.9, 0.8, 0.1, 0.05], [1, 1, 0, 0])
    pts = set(zip(c.pf.tolist(), c.pd.tolist()))
    assert (0.0, 1.0) in pts
    ties = ev.roc([0.5] * 4, [1, 0, 1, 0])
    assert list(zip(ties.pf, ties.pd)) == [(0.0, 0.0), (1.0, 1.0)]
    assert np.isinf(ties.thresholds[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_roc_area_equals_auc(seed):
    r = np.random.default_rng(seed)
    s = np.round(r.standard_normal(1000), 2)
    t = r.uniform(size=1000) < 0.1
    t[0], t[1] = True, False
    curve = ev.roc(s, t)
    assert abs(curve.area() - ev.auc(s, t)) < 1e-12
    assert np.all(np.diff(curve.pf) >= 0) and np.all(np.diff(curve.pd) >= 0)
    assert (curve.pf[0], curve.pd[0], curve.pf[-1], curve.pd[-1]) == (0.0, 0.0, 1.0, 1.0)


def test_mauc():
    assert ev.mauc([0.8]) == 0.8
    assert ev.mauc([1.0, 0.5]) == 0.75
    assert ev.mauc([0.2, 0.7, 0.9]) == pytest.approx(ev.mauc([0.9, 0.2, 0.7]))
    with pytest.raises(ValueError):
        ev.mauc([])


def test_report_csv():
    rep = ev.EvalReport([ev.SceneReport("scene_000", 1.0, seconds=0.25), ev.SceneReport("scene_001", 0.5)])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "scene_id,auc,seconds"
    assert lines[1] == "scene_000,1.000000000000,"
    assert lines[-1] == "mAUC,0.750000000000,"
    assert rep.to_csv(timing=True).splitlines()[1] == "scene_000,1.000000000000,0.250000"


def test_evaluate_scene_and_roc_csv():
    rep = ev.evaluate_scene("a", np.array([[0.9, 0.1], [0.2, 0.3]]), np.array([[1, 0], [0, 0]]))
    assert rep.auc == 1.0
    text = ev.roc_csv(rep.curve)
    assert text.splitlines()[0] == "threshold,pf,pd"
    assert text.splitlines()[1].startswith("inf,0.0,0.0")


def _axis_cube():
    # centered coordinates with exact population variances 4, 1, 0.25
    base = np.array([[2.0, 1.0, 0.5], [-2.0, -1.0, -0.5], [2.0, -1.0, 0.5], [-2.0, 1.0, -0.5],
                     [2.0, 1.0, -0.5], [-2.0, -1.0, 0.5], [2.0, -1.0, -0.5], [-2.0, 1.0, 0.5]])
    return base, (base + np.array([1.0, 2.0, 3.0])).T.reshape(3, 2, 4)


def test_pca_axis_aligned():
    centered, cube = _axis_cube()
    labels = np.array([1, 0, 0, 0, 0, 0, 0, 0]).reshape(2, 4)
    res = ev.pca_diag(cube, labels, k=3)
    np.testing.assert_allclose(res.eigenvalues, [4.0, 1.0, 0.25], atol=1e-12)
    np.testing.assert_allclose(res.projections, centered, atol=1e-12)
    assert not res.rank_deficient


def test_pca_duplication_invariance(rng):
    cube = rng.standard_normal((5, 4, 6))
    labels = rng.uniform(size=(4, 6)) < 0.3
    res = ev.pca_diag(cube, labels)
    dup = ev.pca_diag(np.concatenate([cube, cube], axis=2), np.concatenate([labels, labels], axis=1))
    np.testing.assert_allclose(dup.eigenvalues, res.eigenvalues, atol=1e-12)
    proj = dup.projections.reshape(4, 12, 3)
    np.testing.assert_allclose(proj[:, :6].reshape(-1, 3), res.projections, atol=1e-10)


def test_pca_orthonormal_and_variances(rng):
    cube = rng.standard_normal((6, 8, 8)) * np.arange(1, 7)[:, None, None]
    res = ev.pca_diag(cube, np.zeros((8, 8)), k=4)
    np.testing.assert_allclose(res.vectors.T @ res.vectors, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(res.projections.var(axis=0), res.eigenvalues, atol=1e-8)
    assert np.all(np.diff(res.eigenvalues) <= 0)
    big = np.argmax(np.abs(res.vectors), axis=0)
    assert np.all(res.vectors[big, np.arange(4)] > 0)


def test_pca_rank_deficient_warning():
    base = np.linspace(0, 1, 16)
    cube = np.stack([base, 2 * base, -base]).reshape(3, 4, 4)
    res = ev.pca_diag(cube, np.zeros((4, 4)), k=3)
    assert res.rank_deficient and res.vectors.shape[1] == 1
    lines = res.to_csv().splitlines()
    assert lines[0].startswith("# warning")
    assert lines[1] == "pc1,label"


def test_pca_errors(rng):
    with pytest.raises(ValueError):
        ev.pca_diag(rng.standard_normal((2, 4, 4)), np.zeros((4, 4)), k=3)
    with pytest.raises(ValueError):
        ev.pca_diag(rng.standard_normal((4, 4, 4)), np.zeros((3, 4)))
