import numpy as np
import pytest

import fetnet


def haar_reference(x):
    a, b = x[0::2, 0::2], x[0::2, 1::2]
    c, d = x[1::2, 0::2], x[1::2, 1::2]
    return {
        "ll": (a + b + c + d) / 2,
        "lh": (a + b - c - d) / 2,
        "hl": (a - b + c - d) / 2,
        "hh": (a - b - c + d) / 2,
    }


def test_haar_block_and_reconstruction():
    bands = fetnet.dwt2(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert bands["ll"].shape == (1, 1)
    assert [bands[k][0, 0] for k in ("ll", "lh", "hl", "hh")] == pytest.approx([5.0, -2.0, -1.0, 0.0])
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(8, 6, 3))
    bands = fetnet.dwt2(x)
    ref = haar_reference(x)
    for k in ref:
        np.testing.assert_allclose(bands[k], ref[k], atol=1e-12)
    back = fetnet.idwt2(bands["ll"], bands["lh"], bands["hl"], bands["hh"])
    np.testing.assert_allclose(back, x, atol=1e-12)
    energy = sum(float(np.sum(b**2)) for b in bands.values())
    assert energy == pytest.approx(float(np.sum(x**2)), rel=1e-12)


def test_odd_extent_is_value_error():
    with pytest.raises(ValueError):
        fetnet.dwt2(np.zeros((3, 4, 2)))


def softmax(z, axis):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def test_efficient_attention_matches_numpy():
    rng = np.random.default_rng(1)
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(7, 4)), rng.normal(size=(7, 3))
    ref = softmax(q, 1) @ (softmax(k, 0).T @ v)
    np.testing.assert_allclose(fetnet.efficient_attention(q, k, v), ref, atol=1e-12)


def test_standard_mhsa_matches_numpy():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 4))
    wq, wk, wv, wo = (rng.normal(size=(4, 4)) for _ in range(4))
    att = softmax((x @ wq) @ (x @ wk).T / 2.0, 1)
    ref = att @ (x @ wv) @ wo
    np.testing.assert_allclose(fetnet.standard_mhsa(x, wq, wk, wv, wo, 1), ref, atol=1e-12)


def test_spectrum_and_hf_ratio():
    p = fetnet.power_spectrum(np.full((8, 8), 2.0))
    assert p[4, 4] == pytest.approx(4.0 * 64)
    board = np.indices((16, 16)).sum(axis=0) % 2 * 2.0 - 1.0
    assert fetnet.hf_energy_ratio(board[:, :, None]) == pytest.approx(1.0)


def test_ften_round_trip(tmp_path):
    x = np.arange(24, dtype=float).reshape(2, 3, 4)
    path = tmp_path / "x.ften"
    fetnet.write_ften(path, x)
    raw = path.read_bytes()
    assert raw[:5] == b"FTEN\x01"
    assert len(raw) == 8 + 8 * 3 + 8 * 24
    np.testing.assert_array_equal(fetnet.read_ften(path), x)
    with pytest.raises(OSError):
        fetnet.read_ften(tmp_path / "missing.ften")


def test_synthetic_samples_are_deterministic():
    img1, lab1 = fetnet.make_sample(3, size=32, seed=4)
    img2, lab2 = fetnet.make_sample(3, size=32, seed=4)
    assert img1.shape == (32, 32, 1) and lab1.shape == (32, 32)
    np.testing.assert_array_equal(img1, img2)
    np.testing.assert_array_equal(lab1, lab2)
    assert set(np.unique(lab1)) <= {0, 1, 2, 3}
    assert fetnet.dsc(lab1, lab1, 3) == 1.0
    assert fetnet.hausdorff(lab1, lab1, 3) == 0.0


def test_model_forward_shape_and_softmax():
    m = fetnet.SegmentationModel({"height": 32, "width": 32, "stage_dims": [8, 16, 32, 64]}, seed=0)
    assert m.parameter_count() > 0
    img, _ = fetnet.make_sample(0, size=32)
    logits = m.forward(img)
    assert logits.shape == (32, 32, 4)
    assert np.isfinite(logits).all()


def test_gradchecks_pass():
    rows = fetnet.op_gradchecks(0)
    assert rows and all(r["pass"] for r in rows)


def test_tiny_training_run(tmp_path):
    fetnet.gen_synth(tmp_path / "data", n=6, size=32, seed=1)
    cfg = {"epochs": 1, "batch_size": 4, "model": {"height": 32, "width": 32, "stage_dims": [8, 16, 32, 64]}}
    out = fetnet.train(cfg, tmp_path / "data", tmp_path / "run")
    assert len(out["history"]) == 1
    assert (tmp_path / "run" / "metrics.jsonl").exists()
    assert 0.0 <= out["final_val"]["mean_dsc"] <= 1.0
