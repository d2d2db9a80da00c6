import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebelhad import hsidata
from rebelhad.detector import rx
from rebelhad.errors import FormatError, SpecError
from rebelhad.evaluation import auc
from rebelhad.hsidata import GroundTruthMask, HsiCube, SceneSpec


def _hcf(h, w, b, values, magic=b"HCF1"):
    return struct.pack("<4s3I", magic, h, w, b) + struct.pack(f"<{len(values)}f", *values)


def test_read_valid_2x2x1(tmp_path):
    p = tmp_path / "c.hcf"
    p.write_bytes(_hcf(2, 2, 1, [0, 0.5, 0.5, 1]))
    cube = hsidata.read_cube(p)
    assert cube.shape == (1, 2, 2)
    np.testing.assert_array_equal(cube.data[0], [[0, 0.5], [0.5, 1]])


def test_bad_magic(tmp_path):
    p = tmp_path / "c.hcf"
    p.write_bytes(_hcf(1, 1, 1, [0], magic=b"HCF2"))
    with pytest.raises(FormatError, match="bad magic"):
        hsidata.read_cube(p)


def test_truncated_payload():
    raw = _hcf(2, 2, 1, [0, 0.5, 0.5])
    with pytest.raises(FormatError, match="truncated"):
        hsidata.decode_cube(raw)


def test_truncated_header():
    with pytest.raises(FormatError, match="truncated header"):
        hsidata.decode_cube(b"HCF1\x01")


def test_dimension_overflow():
    raw = struct.pack("<4s3I", b"HCF1", 65536, 65536, 2)
    with pytest.raises(FormatError, match="overflow"):
        hsidata.decode_cube(raw)


def test_zero_dimension_names_field():
    with pytest.raises(FormatError, match="width"):
        hsidata.decode_cube(struct.pack("<4s3I", b"HCF1", 1, 0, 1))


def test_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        hsidata.decode_cube(_hcf(1, 1, 1, [0.0]) + b"\0")


def test_one_voxel_file_size(tmp_path):
    p = tmp_path / "one.hcf"
    hsidata.write_cube(HsiCube(np.zeros((1, 1, 1))), p)
    raw = p.read_bytes()
    assert len(raw) == 16 + 4
    assert raw == b"HCF1" + struct.pack("<3I", 1, 1, 1) + b"\0\0\0\0"


def test_band_sequential_layout():
    data = np.arange(2 * 2 * 3, dtype=np.float64).reshape(2, 2, 3)  # bands, h, w
    raw = hsidata.encode_cube(HsiCube(data))
    assert struct.unpack("<3I", raw[4:16]) == (2, 3, 2)
    assert struct.unpack("<12f", raw[16:]) == tuple(range(12))


def test_unwritable_directory(tmp_path):
    with pytest.raises(OSError):
        hsidata.write_cube(HsiCube(np.zeros((1, 1, 1))), tmp_path / "missing" / "c.hcf")


@settings(max_examples=40, deadline=None)
@given(
    h=st.integers(1, 16), w=st.integers(1, 16), b=st.integers(1, 16), seed=st.integers(0, 2**32 - 1)
)
def test_round_trip_property(tmp_path_factory, h, w, b, seed):
    data = np.random.default_rng(seed).standard_normal((b, h, w)).astype(np.float32)
    cube = HsiCube(data)
    p = tmp_path_factory.mktemp("rt") / "c.hcf"
    hsidata.write_cube(cube, p)
    back = hsidata.read_cube(p)
    assert back == cube
    assert hsidata.encode_cube(back) == hsidata.encode_cube(cube)


def test_cube_is_immutable():
    cube = HsiCube(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        cube.data[0, 0, 0] = 1.0


def test_cube_rejects_bad_shape():
    with pytest.raises(ValueError):
        HsiCube(np.zeros((2, 2)))


def test_mask_round_trip(tmp_path):
    labels = np.zeros((3, 5), bool)
    labels[1, 2] = labels[2, 4] = True
    p = tmp_path / "m.pgm"
    hsidata.write_mask(GroundTruthMask(labels), p)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n5 3\n255\n")
    assert set(raw[len(b"P5\n5 3\n255\n"):]) == {0, 255}
    assert hsidata.read_mask(p) == GroundTruthMask(labels)


def test_pgm_with_comment():
    raw = b"P5\n# made by hand\n2 1\n255\n\x00\xff"
    np.testing.assert_array_equal(hsidata.decode_pgm(raw), [[0, 255]])


def test_pgm_rejects_other_maxval():
    with pytest.raises(FormatError, match="maxval"):
        hsidata.decode_pgm(b"P5\n1 1\n15\n\x00")


def test_score_map_single_band(tmp_path):
    p = tmp_path / "s.hcf"
    hsidata.write_cube(HsiCube(np.zeros((2, 2, 2))), p)
    with pytest.raises(FormatError, match="1 band"):
        hsidata.read_scores(p)


def test_select_bands():
    cube = HsiCube(np.arange(4 * 2 * 2, dtype=float).reshape(4, 2, 2))
    assert hsidata.select_bands(cube, 4) == cube
    np.testing.assert_array_equal(hsidata.select_bands(cube, 2).data, cube.data[:2])
    with pytest.raises(ValueError):
        hsidata.select_bands(cube, 0)
    with pytest.raises(ValueError):
        hsidata.select_bands(cube, 5)


def test_normalize_examples():
    cube = HsiCube(np.array([2.0, 4.0, 6.0]).reshape(1, 1, 3))
    np.testing.assert_array_equal(hsidata.normalize(cube).data.ravel(), [0, 0.5, 1])
    np.testing.assert_array_equal(hsidata.normalize(HsiCube(np.full((2, 2, 2), 3.0))).data, 0.0)
    unit = HsiCube(np.array([0.0, 0.25, 1.0]).reshape(1, 1, 3))
    assert hsidata.normalize(unit) == unit


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=30))
def test_normalize_idempotent_and_monotone(values):
    cube = HsiCube(np.array(values).reshape(1, 1, -1))
    n1 = hsidata.normalize(cube)
    n2 = hsidata.normalize(n1)
    np.testing.assert_allclose(n2.data, n1.data, atol=1e-12)
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(n1.data.ravel()[order]) >= 0)
    assert n1.data.min() >= 0 and n1.data.max() <= 1


def test_synth_background_only():
    cube, mask = hsidata.synth_scene(SceneSpec(height=16, width=16, bands=5, seed=3))
    assert not mask.labels.any()
    assert cube.data.min() == 0.0 and cube.data.max() == 1.0


def test_synth_deterministic():
    spec = SceneSpec(height=16, width=12, bands=6, anomaly_count=3, anomaly_contrast=0.2, seed=11)
    c1, m1 = hsidata.synth_scene(spec)
    c2, m2 = hsidata.synth_scene(spec)
    assert c1 == c2 and m1 == m2
    assert hsidata.encode_cube(c1) == hsidata.encode_cube(c2)


def test_synth_values_are_float32_exact():
    cube, _ = hsidata.synth_scene(SceneSpec(height=8, width=8, bands=3, seed=5))
    np.testing.assert_array_equal(cube.data, cube.data.astype(np.float32).astype(np.float64))


def test_synth_mask_cardinality_and_border():
    spec = SceneSpec(height=20, width=20, bands=4, anomaly_count=5, anomaly_size=3, anomaly_contrast=0.3, seed=2)
    _, mask = hsidata.synth_scene(spec)
    assert mask.labels.sum() == 5 * 9
    assert not mask.labels[0].any() and not mask.labels[-1].any()
    assert not mask.labels[:, 0].any() and not mask.labels[:, -1].any()


def test_synth_anomalies_do_not_fit():
    with pytest.raises(SpecError):
        hsidata.synth_scene(SceneSpec(height=6, width=6, bands=2, anomaly_count=1, anomaly_size=5))
    with pytest.raises(SpecError):
        hsidata.synth_scene(SceneSpec(height=8, width=8, bands=2, anomaly_count=9, anomaly_size=3, seed=0))


def test_synth_rejects_invalid_spec():
    with pytest.raises(SpecError):
        SceneSpec(endmembers=1).validate()
    with pytest.raises(SpecError):
        SceneSpec(noise_sigma=-1).validate()


def test_zero_contrast_is_chance_level():
    aucs = []
    for s in range(20):
        cube, mask = hsidata.synth_scene(SceneSpec(anomaly_count=4, anomaly_contrast=0.0, seed=500 + s))
        aucs.append(auc(rx(cube), mask))
    assert abs(np.mean(aucs) - 0.5) <= 0.15


def test_load_corpus_band_selection(tmp_path):
    for i in range(3):
        cube, _ = hsidata.synth_scene(SceneSpec(height=8, width=8, bands=6, seed=i))
        hsidata.write_cube(cube, tmp_path / f"c{i}.hcf")
    (tmp_path / "notes.txt").write_text("ignored")
    cubes = hsidata.load_corpus(tmp_path, first_k=4)
    assert len(cubes) == 3 and all(c.bands == 4 for c in cubes)
