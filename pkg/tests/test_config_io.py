import numpy as np
import pytest

from curvesplat.config import ConfigError, TrainConfig, config_from_dict, load_config, parse_config_text
from curvesplat.imageio import ImageFormatError, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm


def test_defaults():
    cfg = TrainConfig()
    assert cfg.iterations == 3000 and cfg.prune_interval == 500 and cfg.spatial_lr_scale is None
    w = cfg.weights
    assert (w.lambda_r, w.lambda_d, w.lambda_o_sky, w.lambda_icc, w.lambda_dr, w.lambda_v) == (0.2, 1.0, 0.05, 0.01, 0.1, 1.0)


def test_key_value_and_json_agree(tmp_path):
    text = "iterations = 10  # short\nlambda_icc = 0\nlr.center = 1e-3\nspatial_lr_scale = extent\n"
    a = parse_config_text(text)
    b = parse_config_text('{"iterations": 10, "lambda_icc": 0, "lr": {"center": 0.001}}')
    assert a == b
    assert a.iterations == 10 and a.weights.lambda_icc == 0.0 and a.lr == {"center": 1e-3}
    p = tmp_path / "c.cfg"
    p.write_text(text)
    assert load_config(str(p)) == a


def test_to_dict_roundtrip():
    cfg = config_from_dict({"seed": 5, "lr.sky": 0.1, "lambda_v": 0.0, "spatial_lr_scale": 2.5})
    assert config_from_dict(cfg.to_dict()) == cfg
    assert cfg.replace(threads=4).threads == 4


@pytest.mark.parametrize("bad", ["bogus = 1", "lr.nothing = 1", "iterations = x", "lambda_v = -1", "just text", "{bad json"])
def test_config_errors(bad):
    with pytest.raises(ValueError):
        parse_config_text(bad)


def test_config_error_type():
    with pytest.raises(ConfigError):
        config_from_dict({"iterations": -1})


def test_ppm_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(str(tmp_path / "a.ppm"), rgb)
    assert np.array_equal(read_ppm(str(tmp_path / "a.ppm")), rgb)
    g = rng.uniform(size=(5, 7)) < 0.5
    write_pgm(str(tmp_path / "a.pgm"), g)
    assert np.array_equal(read_pgm(str(tmp_path / "a.pgm")) > 0, g)


def test_pfm_roundtrip_and_orientation(tmp_path):
    v = np.arange(12, dtype=np.float32).reshape(3, 4)
    write_pfm(str(tmp_path / "a.pfm"), v)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n4 3\n-1.0\n")
    # bottom row first on disk
    assert np.frombuffer(raw[-16:], "<f4").tolist() == [0.0, 1.0, 2.0, 3.0]
    assert np.array_equal(read_pfm(str(tmp_path / "a.pfm")), v)
    c = np.random.default_rng(1).normal(size=(3, 2, 3)).astype(np.float32)
    write_pfm(str(tmp_path / "c.pfm"), c)
    assert np.array_equal(read_pfm(str(tmp_path / "c.pfm")), c)


def test_image_errors(tmp_path):
    (tmp_path / "x.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(str(tmp_path / "x.ppm"))
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_pgm(str(tmp_path / "t.pgm"))
    with pytest.raises(ImageFormatError):
        write_pfm(str(tmp_path / "b.pfm"), np.zeros((2, 2, 2)))
