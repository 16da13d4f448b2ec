import math

import numpy as np
import pytest

import diop


@pytest.fixture(scope="module")
def reduced():
    return diop.build_embedding_model(diop.ModelConfig(), diop.EmbeddingVariant.reduced, 1)


def test_forward_shape_and_fusion(reduced):
    x = np.random.default_rng(0).uniform(-0.5, 0.5, size=(1, 16000)).astype(np.float32)
    y = diop.forward(reduced, x)
    assert y.shape == (32,)
    fused = diop.fuse_conv_relu(reduced)
    assert reduced.num_nodes - fused.num_nodes == diop.count_conv_relu_pairs(reduced) == 4
    np.testing.assert_array_equal(diop.forward(fused, x), y)
    assert diop.executed_nodes(reduced, x) - diop.executed_nodes(fused, x) == 4


def test_quantization(reduced):
    x = np.random.default_rng(1).normal(size=200).astype(np.float32)
    back, scale = diop.quantize_roundtrip(x)
    assert scale == pytest.approx(np.abs(x).max() / 127, rel=1e-6)
    assert np.all(np.abs(back - x) <= scale / 2 * (1 + 1e-5))
    q = diop.quantize_weights_int8(reduced)
    assert len(diop.serialize_model(q)) < len(diop.serialize_model(reduced))
    assert diop.param_count(q) == diop.param_count(reduced)


def test_pruning_and_memory(reduced):
    pruned = diop.prune_unstructured_global(reduced, 0.3)
    weights = np.concatenate([pruned.param(n).ravel() for n in diop.prunable_weights(pruned)])
    assert abs((weights == 0).mean() - 0.3) <= 1 / weights.size
    assert diop.param_count(pruned) == diop.param_count(reduced)
    assert diop.coo_break_even_amount(3, 4) == pytest.approx(0.8571, abs=1e-4)
    assert diop.coo_memory_bytes([10, 10], 10, 4) == 2 * 8 * 10 + 40
    at3 = diop.sparse_export_size(reduced, 0.3)
    at9 = diop.sparse_export_size(reduced, 0.9)
    assert at3["coo_bytes"] > at3["dense_bytes"]
    assert at9["coo_bytes"] < at9["dense_bytes"]
    s = diop.prune_structured(reduced, 1, 2.0, 0)
    w0 = reduced.param("block0.conv.weight")
    norms = np.sqrt((w0.astype(np.float64) ** 2).reshape(w0.shape[0], -1).sum(axis=1))
    assert np.all(s.param("block0.conv.weight")[np.argmin(norms)] == 0)


def test_der_and_rttm(tmp_path):
    ref = diop.Annotation("f", [diop.Segment(0.0, 10.0, "A")])
    hyp = diop.Annotation("f", [diop.Segment(0.0, 8.0, "B")])
    assert diop.der(ref, hyp)["der"] == 0.2
    assert diop.der(ref, ref)["der"] == 0.0
    assert diop.optimal_mapping(ref, hyp) == {"B": "A"}
    path = tmp_path / "x.rttm"
    diop.rttm_write(ref, path)
    assert diop.rttm_read(path) == ref
    assert diop.rttm_format(ref).startswith("SPEAKER f 1 0.000 10.000 <NA> <NA> A")
    with pytest.raises(diop.FormatError):
        diop.rttm_parse("SPEAKER f 1 zero 1.0 <NA> <NA> A <NA> <NA>\n")


def test_synth_and_pipeline(reduced, tmp_path):
    samples, ref = diop.synth_generate(duration=8.0, seed=3)
    assert samples.dtype == np.float32 and samples.size == 8 * 16000
    assert ref.labels() == ["spk0", "spk1"]
    again, ref2 = diop.synth_generate(duration=8.0, seed=3)
    np.testing.assert_array_equal(samples, again)
    assert ref == ref2
    diop.wav_write(samples, 16000, tmp_path / "a.wav")
    back, rate = diop.wav_read(tmp_path / "a.wav", 16000)
    assert rate == 16000 and np.max(np.abs(back - samples)) <= 1 / 32767

    seg = diop.build_segmentation_model(diop.ModelConfig(), 1)
    hyp, lat = diop.run_pipeline(reduced, seg, samples, diop.PipelineConfig(), "synth")
    assert len(lat) == 13 and all(v > 0 for v in lat)
    assert all(s.duration > 0 for s in hyp.segments)
    mean, std = diop.latency_stats(lat)
    assert mean == pytest.approx(np.mean(lat), abs=1e-12)
    assert std == pytest.approx(np.std(lat, ddof=1), abs=1e-12)


def test_distillation_lambda_zero_matches_task_only():
    cfg = diop.ModelConfig()
    cfg.frontend_channels = 4
    cfg.block_channels = [4, 4, 4, 4, 4]
    cfg.embedding_dim = 4
    student = diop.build_embedding_model(cfg, diop.EmbeddingVariant.reduced, 2)
    teacher = diop.build_embedding_model(cfg, diop.EmbeddingVariant.baseline, 3)
    samples, ref = diop.synth_generate(duration=8.0, seed=5)
    dc = diop.DistillConfig()
    dc.epochs = 2
    dc.checkpoint_every = 1
    dc.batch_size = 4
    alone = diop.train_distill(student, None, samples, ref, dc, 0.25, 0.5)
    zero = diop.train_distill(student, teacher, samples, ref, dc, 0.25, 0.5)
    assert alone["model"] == zero["model"]
    assert alone["checkpoint_epochs"] == [0, 1]
    dc.lam = 1.0
    pulled = diop.train_distill(student, teacher, samples, ref, dc, 0.25, 0.5)
    assert pulled["initial_teacher_mse"] is not None
    assert all(math.isfinite(v) for v in pulled["loss"])


def test_cli(tmp_path):
    code, out, _ = diop.run_cli(["analyze-memory", "--ndim", "3", "--elem", "4"])
    assert code == 0 and "0.8571" in out
    code, _, err = diop.run_cli(["optimize"])
    assert code == 1 and err
    code, _, _ = diop.run_cli(["synth-data", "--out", str(tmp_path), "--files", "1", "--duration", "4"])
    assert code == 0
    assert (tmp_path / "synth000.wav").exists() and (tmp_path / "synth-data.config").exists()
