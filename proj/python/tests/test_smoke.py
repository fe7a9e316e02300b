import json
import os
import subprocess

import numpy as np
import pytest

import xbartest as xt


@pytest.fixture(scope="module")
def mlp():
    return xt.make_toy_model("mlp", classes=32, seed=5, trained=True)


@pytest.fixture(scope="module")
def tv(mlp):
    return xt.generate_test_vector(mlp, seed=1)


def test_kl_closed_form():
    assert xt.kl_divergence(0.0, 1.0) == 0.0
    assert xt.kl_divergence(0.5, 1.0) == pytest.approx(0.125, abs=1e-15)
    assert xt.kl_general(0.5, 1.0, 0.0, 1.0) == pytest.approx(0.125, abs=1e-15)


def test_quantize_int8():
    levels, scale = xt.quantize_int8(np.array([-1.0, 0.5, 1.0]))
    assert levels == [-127, 64, 127]
    assert scale == pytest.approx(1.0 / 127.0)


def test_forward_shapes(mlp):
    x = np.zeros(mlp.input_shape)
    y = mlp.forward(x)
    assert y.shape == (32,)
    p = mlp.forward(x, logits=False)
    assert p.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mlp.forward(np.zeros(3))


def test_generate_and_detect(mlp, tv):
    assert tv.converged
    assert tv.input.shape == tuple(mlp.input_shape)
    assert tv.baseline["dkl0"] < 1e-7
    clean = xt.detect(mlp.quantized(), tv, 1e-4)
    assert clean["verdict"] == "clean"
    faulty = xt.detect(mlp.inject("bit-flip", 0.1, seed=3), tv, 1e-4)
    assert faulty["verdict"] == "faulty"
    assert faulty["d_kl"] > clean["d_kl"]


def test_test_vector_roundtrip(tv, tmp_path):
    path = tmp_path / "tv.json"
    tv.save(path)
    back = xt.TestVector.load(path)
    np.testing.assert_array_equal(back.input, tv.input)
    assert back.baseline == tv.baseline
    with pytest.raises(ValueError):
        tv.save(path)


def test_inject_is_reproducible(mlp):
    x = np.ones(mlp.input_shape)
    a = mlp.inject("multiplicative-variation", 0.05, seed=9).forward(x)
    b = mlp.inject("multiplicative-variation", 0.05, seed=9).forward(x)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        mlp.inject("sideways-flip", 0.1)


def test_gradcheck():
    r = xt.run_gradcheck(cases=20, seed=4)
    assert r["passed"] == r["cases"] == 20


@pytest.mark.skipif(not os.environ.get("XBT_CLI"), reason="XBT_CLI not set")
def test_cli_gradcheck():
    out = subprocess.run([os.environ["XBT_CLI"], "gradcheck", "--cases", "10"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    bad = subprocess.run([os.environ["XBT_CLI"], "gen", "--nope"], capture_output=True, text=True)
    assert bad.returncode == 2
