import json
import math

import numpy as np
import pytest

import bclab


def test_simple_mix_examples():
    np.testing.assert_allclose(bclab.mix([2.0], [4.0], 0.5), [3.0])
    np.testing.assert_allclose(bclab.mix([0.0, 4.0], [4.0, 0.0], 0.25), [3.0, 1.0])


def test_normalised_mixes():
    x1, x2 = np.array([2.0, 0.0]), np.array([4.0, 4.0])
    np.testing.assert_allclose(bclab.mix(x1, x2, 0.5, "zero_mean"), [0.5, -0.5])
    h = math.sqrt(0.5)
    np.testing.assert_allclose(bclab.mix(x1, x2, 0.5, "variance_preserving"), [h, -h])


def test_mix_keeps_shape_and_symmetry():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4, 4)), rng.normal(size=(3, 4, 4)) * 2 + 1
    for method in ["simple", "zero_mean", "variance_preserving", "bc_plus"]:
        m = bclab.mix(a, b, 0.3, method)
        assert m.shape == (3, 4, 4)
        np.testing.assert_allclose(m, bclab.mix(b, a, 0.7, method), atol=1e-12)


def test_coefficients():
    assert bclab.bc_plus_coefficient(0.5, 1.0, 2.0) == pytest.approx(2 / 3)
    assert bclab.sound_db_coefficient(0.5, 20.0, 0.0) == pytest.approx(1 / 11)


def test_labels_and_losses():
    assert bclab.mix_labels([1, 0, 0], [0, 0, 1], 0.3) == pytest.approx([0.3, 0, 0.7])
    assert bclab.softmax([0.0, math.log(3.0)]) == pytest.approx([0.25, 0.75])
    loss, grad = bclab.kl_ratio_loss([0.5, 0.5], [0.0, 0.0])
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert grad == pytest.approx([0.0, 0.0], abs=1e-15)
    assert bclab.single_label_target(1, 2, 0.5) == 2


def test_fisher_and_pca():
    res = bclab.fisher_criterion(np.array([[0.0], [2.0], [4.0], [6.0]]), [0, 0, 1, 1], 0, 1)
    assert res["value"] == pytest.approx(4.0)
    assert bclab.mean_fisher(np.array([[0.0], [2.0], [4.0], [6.0]]), [0, 0, 1, 1]) == pytest.approx(4.0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 5)) * np.arange(1, 6)
    coords, eig = bclab.pca_project(x, 2)
    assert coords.shape == (50, 2)
    ref = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    np.testing.assert_allclose(eig[:2], ref[:2], rtol=1e-9)


def test_shape_errors_are_value_errors():
    with pytest.raises(ValueError):
        bclab.mix([1.0, 2.0], [1.0], 0.5)
    with pytest.raises(ValueError):
        bclab.mix([1.0], [2.0], 0.5, "no_such_method")


def test_manifest_round_trip():
    doc = json.loads(bclab.normalize_manifest('{"batch_size": 32}'))
    assert doc["batch_size"] == 32
    assert doc["preset"] == "cnn-small"
    with pytest.raises(bclab.ManifestError):
        bclab.normalize_manifest('{"batchsize": 32}')


def test_cli_usage_exit_codes():
    code, _, err = bclab.run_cli(["no-such-command"])
    assert code == 2
    assert err
    code, out, _ = bclab.run_cli(["--help"])
    assert code == 0
    assert "train" in out
