import numpy as np
import pytest

from ostta.data import BlobSpec, Sample, generate_blobs
from ostta.losses import LossConfig
from ostta.model import forward, init_model
from ostta.trainer import (
    TrainConfig,
    extract_bank,
    load_bank,
    save_bank,
    train,
)


def _tiny_set():
    return [
        Sample(np.array([1.0, 0.0]), 0),
        Sample(np.array([-1.0, 0.5]), 1),
        Sample(np.array([0.0, -1.0]), 2),
        Sample(np.array([1.2, 0.1]), 0),
        Sample(np.array([-0.8, 0.6]), 1),
        Sample(np.array([0.1, -1.1]), 2),
    ]


def test_train_reduces_loss():
    train_set, _ = generate_blobs(BlobSpec(seed=0, samples_per_cluster=30))
    params = init_model(2, 8, 3, 0)
    cfg = TrainConfig(epochs=30, objective="ce")
    _, history = train(params, train_set, cfg)
    assert len(history) == 30
    assert history[-1] < history[0]
    assert np.mean(history[-5:]) < np.mean(history[:5])


def test_train_does_not_mutate_input_params():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    before = params.param_bytes()
    train(params, _tiny_set(), TrainConfig(epochs=2))
    assert params.param_bytes() == before


def test_train_deterministic():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    cfg = TrainConfig(epochs=3)
    p1, h1 = train(params, _tiny_set(), cfg)
    p2, h2 = train(params, _tiny_set(), cfg)
    assert p1.param_bytes() == p2.param_bytes()
    assert h1 == h2


def test_train_shuffle_seed_changes_trajectory():
    train_set, _ = generate_blobs(BlobSpec(seed=1, samples_per_cluster=20))
    params = init_model(2, 4, 3, 0, hidden=(8,))
    _, h1 = train(params, train_set, TrainConfig(epochs=2, shuffle_seed=0))
    _, h2 = train(params, train_set, TrainConfig(epochs=2, shuffle_seed=1))
    assert h1 != h2


def test_train_zero_epochs_returns_copy():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    out, history = train(params, _tiny_set(), TrainConfig(epochs=0))
    assert history == []
    assert out.param_bytes() == params.param_bytes()


def test_train_momentum_matches_manual_single_step():
    """One sample, one epoch, batch 1: p' = p - lr * grad."""
    params = init_model(2, 3, 2, 0, hidden=(4,))
    sample = Sample(np.array([0.5, -0.5]), 0)
    cfg = TrainConfig(epochs=1, batch_size=1, learning_rate=0.1,
                      momentum=0.9, objective="ce")
    out, _ = train(params, [sample], cfg)
    from ostta.losses import ce_loss
    from ostta.model import backward

    trace = forward(params, sample.features)
    _, dlogits = ce_loss(trace.logits, sample.label)
    g = backward(params, trace, dlogits)
    np.testing.assert_allclose(out.head, params.head - 0.1 * g.head, atol=1e-12)
    np.testing.assert_allclose(
        out.weights[0], params.weights[0] - 0.1 * g.weights[0], atol=1e-12
    )


def test_train_rejects_unknown_labels():
    bad = [Sample(np.array([0.0, 0.0]), -1)]
    with pytest.raises(ValueError):
        train(init_model(2, 4, 3, 0), bad, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0).validate()
    with pytest.raises(ValueError):
        TrainConfig(objective="adam").validate()


def test_train_diverging_raises():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    cfg = TrainConfig(epochs=200, learning_rate=1e6, objective="ce")
    with pytest.raises(RuntimeError):
        train(params, _tiny_set(), cfg)


def test_train_ugd_vs_ce_differ():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    p_ce, _ = train(params, _tiny_set(), TrainConfig(epochs=2, objective="ce"))
    p_ugd, _ = train(params, _tiny_set(), TrainConfig(epochs=2, objective="ugd"))
    assert p_ce.param_bytes() != p_ugd.param_bytes()


def test_train_loss_config_flags_respected():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    base = TrainConfig(epochs=2)
    no_ua = TrainConfig(epochs=2, loss=LossConfig(enable_ua=False))
    p1, _ = train(params, _tiny_set(), base)
    p2, _ = train(params, _tiny_set(), no_ua)
    assert p1.param_bytes() != p2.param_bytes()


def test_extract_bank_properties():
    train_set = _tiny_set()
    params = init_model(2, 4, 3, 0, hidden=(8,))
    bank = extract_bank(params, train_set)
    assert bank.embeddings.shape == (6, 4)
    assert np.array_equal(bank.labels, [0, 1, 2, 0, 1, 2])
    np.testing.assert_allclose(
        np.linalg.norm(bank.embeddings, axis=1), 1.0, atol=1e-12
    )
    np.testing.assert_allclose(
        np.linalg.norm(bank.prototypes, axis=1), 1.0, atol=1e-12
    )
    # embeddings preserve input order
    np.testing.assert_allclose(
        bank.embeddings[0], forward(params, train_set[0].features).z, atol=1e-12
    )
    # prototype = renormalized class mean
    mean0 = bank.embeddings[[0, 3]].mean(axis=0)
    np.testing.assert_allclose(
        bank.prototypes[0], mean0 / np.linalg.norm(mean0), atol=1e-12
    )


def test_extract_bank_missing_class():
    params = init_model(2, 4, 3, 0, hidden=(8,))
    with pytest.raises(ValueError):
        extract_bank(params, [Sample(np.array([1.0, 0.0]), 0)])


def test_bank_round_trip(tmp_path):
    params = init_model(2, 4, 3, 0, hidden=(8,))
    bank = extract_bank(params, _tiny_set())
    path = tmp_path / "bank.csv"
    save_bank(bank, str(path))
    loaded = load_bank(str(path))
    assert np.array_equal(bank.embeddings, loaded.embeddings)
    assert np.array_equal(bank.labels, loaded.labels)
    assert np.array_equal(bank.prototypes, loaded.prototypes)
