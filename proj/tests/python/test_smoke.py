import json

import numpy as np
import pytest

import mi2v


def test_shape_contract():
    spec = mi2v.LatentSpec.parse("1280x720x17")
    assert (spec.latent_width, spec.latent_height, spec.latent_frames) == (40, 23, 3)
    assert mi2v.token_count(spec) == 2760
    t = mi2v.token_timesteps(spec, 0.6)
    assert len(t) == 2760 and t[0] == 0.0 and t[-1] == pytest.approx(0.6)


def test_schedule_values():
    s = mi2v.schedule_eval(0.5)
    assert s["a"] == 0.5 and s["b"] == 0.5
    assert s["lambda"] == pytest.approx(0.0, abs=1e-12)
    assert s["dlambda"] == pytest.approx(-8.0, abs=1e-9)
    assert s["weight"] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(mi2v.Mi2vError):
        mi2v.schedule_eval(0.0)


def test_noise_forward_is_a_straight_line():
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((2, 5, 8)).astype(np.float32)
    eps = rng.standard_normal((2, 5, 8)).astype(np.float32)
    t = np.array([0.0, 0.25, 0.5, 0.75, 1.0], dtype=np.float32)
    z = mi2v.noise_forward(x0, eps, t)
    expected = (1 - t)[None, :, None] * x0 + t[None, :, None] * eps
    np.testing.assert_allclose(z, expected, rtol=1e-6, atol=1e-6)
    np.testing.assert_array_equal(z[:, 0], x0[:, 0])
    np.testing.assert_array_equal(z[:, -1], eps[:, -1])


def test_attention_forms_agree():
    x = np.random.default_rng(1).standard_normal((1, 40, 32)).astype(np.float32)
    fast = mi2v.attention(x, 4, "linear", "all", seed=3)
    slow = mi2v.attention(x, 4, "linear-reference", seed=3)
    assert fast.shape == (1, 40, 32)
    assert np.abs(fast - slow).max() / np.abs(slow).max() < 1e-4
    soft = mi2v.attention(x, 4, "softmax", "ht", seed=3)
    np.testing.assert_allclose(soft, mi2v.attention(x, 4, "softmax", seed=3), rtol=1e-5, atol=1e-6)
    assert mi2v.dual_form_max_error(5) < 1e-4


def test_regression_gradient_matches_numpy():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(16).astype(np.float32)
    y = rng.standard_normal(16).astype(np.float32)
    value, grad = mi2v.loss_regression(x, y)
    assert value == pytest.approx(np.mean((x.astype(np.float64) - y) ** 2), rel=1e-6)
    np.testing.assert_allclose(grad, 2 * (x - y) / 16, rtol=1e-5)
    s = rng.standard_normal(16).astype(np.float32)
    assert not mi2v.dmd_gradient_field(s, s).any()
    assert mi2v.loss_adv_discriminator(np.ones((2, 2)), -np.ones((2, 2))) == 0.0


def test_container_round_trip_and_bytes():
    data = mi2v.encode_container([("x", np.arange(4, dtype=np.float32).reshape(2, 2))])
    assert data[:4] == b"MI2V"
    assert data[-16:] == bytes.fromhex("00000000 0000803f 00000040 00004040")
    [(name, arr)] = mi2v.decode_container(data)
    assert name == "x" and arr.shape == (2, 2) and arr[1, 1] == 3.0
    with pytest.raises(mi2v.Mi2vError, match="bad magic"):
        mi2v.decode_container(b"XXXX" + data[4:])


def test_pgm_preview_header():
    spec = mi2v.LatentSpec.parse("1280x720x17")
    pgm = mi2v.emit_pgm_preview(np.zeros((920, 128), np.float32), spec)
    assert pgm.startswith(b"P5\n40 23\n255\n")
    assert set(pgm[13:]) == {128}


def test_generate_keeps_reference():
    ref = np.random.default_rng(5).standard_normal((16, 128)).astype(np.float32)
    out = mi2v.generate("128x128x9", steps=2, seed=4, preset="micro", reference=ref)
    assert out.shape == (32, 128)
    np.testing.assert_array_equal(out[:16], ref)
    again = mi2v.generate("128x128x9", steps=2, seed=4, preset="micro", reference=ref)
    np.testing.assert_array_equal(out, again)


def test_parameter_count_and_cli():
    code, out, _ = mi2v.cli(["params", "--preset", "micro"])
    assert code == 0 and int(out) == mi2v.parameter_count("micro")
    assert mi2v.cli(["nope"])[0] == 2


def test_verify_report():
    report = json.loads(mi2v.verify_report())
    assert report["passed"] is True
    assert any(c["name"] == "attention.dual_form_equivalence" for c in report["checks"])
