from __future__ import annotations

import numpy as np
import pytest

from fedagg.autoencoder import (
    AutoencoderParams,
    decode,
    decode_batch,
    default_embedding_dim,
    encode,
    encode_batch,
    init_autoencoder,
    make_autoencoder_specs,
    pretrain,
    reconstruction_gap,
)
from fedagg.data import generate_synthetic
from fedagg.nn_core import ModelParams, ModelSpec, forward, init_params, params_equal


def blob_matrix(n=200, seed=0, classes=4, dim=8):
    return generate_synthetic(classes, dim, n, 1.0, seed).matrix()[0]


def test_default_embedding_dim():
    assert default_embedding_dim(8) == 2
    assert default_embedding_dim(4) == 2
    assert default_embedding_dim(40) == 10


def test_specs_reject_non_bottleneck():
    with pytest.raises(ValueError):
        make_autoencoder_specs(8, embedding_dim=8)
    with pytest.raises(ValueError):
        make_autoencoder_specs(8, embedding_dim=12)


def test_specs_respect_budget():
    with pytest.raises(ValueError):
        make_autoencoder_specs(64, embedding_dim=16, hidden_width=40, param_budget=1000)
    enc, dec = make_autoencoder_specs(8, 2)
    assert enc.param_count + dec.param_count <= 5000


def test_dimension_consistency_enforced():
    enc, _ = make_autoencoder_specs(8, 2)
    bad_dec = ModelSpec((3, 8, 8))
    with pytest.raises(ValueError):
        AutoencoderParams(encoder=init_params(enc, 0), decoder=init_params(bad_dec, 0))


def test_pretrain_zero_epochs_returns_initial_params():
    enc, dec = make_autoencoder_specs(8, 2)
    X = blob_matrix(50)
    ae = pretrain(enc, dec, X, epochs=0, lr=0.01, seed=3)
    init = init_autoencoder(enc, dec, 3)
    assert params_equal(ae.encoder, init.encoder)
    assert params_equal(ae.decoder, init.decoder)


def test_pretrain_halves_reconstruction_error():
    enc, dec = make_autoencoder_specs(8, 2, hidden_width=16)
    X = blob_matrix(200)
    before = reconstruction_gap(pretrain(enc, dec, X, 0, 0.01, 3), X)
    after = reconstruction_gap(pretrain(enc, dec, X, 50, 0.01, 3), X)
    assert after < 0.5 * before


def test_pretrain_deterministic():
    enc, dec = make_autoencoder_specs(6, 2)
    X = blob_matrix(60, dim=6, classes=3)
    a = pretrain(enc, dec, X, 5, 0.01, 11)
    b = pretrain(enc, dec, X, 5, 0.01, 11)
    assert params_equal(a.encoder, b.encoder)
    assert params_equal(a.decoder, b.decoder)


def test_pretrain_rejects_empty_dataset():
    enc, dec = make_autoencoder_specs(4, 2)
    with pytest.raises(ValueError):
        pretrain(enc, dec, np.zeros((0, 4)), 5, 0.01, 0)


def test_encode_matches_forward_oracle(rng):
    ae = init_autoencoder(*make_autoencoder_specs(5, 2), seed=4)
    x = rng.normal(size=5)
    assert np.array_equal(encode(ae, x), forward(ae.encoder, x))


def test_decode_matches_forward_oracle(rng):
    ae = init_autoencoder(*make_autoencoder_specs(5, 2), seed=4)
    e = rng.normal(size=2)
    assert np.array_equal(decode(ae, e), forward(ae.decoder, e))


def test_zero_encoder_gives_zero_embedding():
    enc, dec = make_autoencoder_specs(4, 2)
    ae = init_autoencoder(enc, dec, 0)
    for arr in (*ae.encoder.weights, *ae.encoder.biases):
        arr[:] = 0.0
    assert np.array_equal(encode(ae, np.ones(4)), np.zeros(2))


def test_encode_decode_deterministic(rng):
    ae = init_autoencoder(*make_autoencoder_specs(5, 2), seed=4)
    x = rng.normal(size=5)
    assert np.array_equal(encode(ae, x), encode(ae, x))


def test_decoder_only_copy_cannot_encode(rng):
    ae = init_autoencoder(*make_autoencoder_specs(5, 2), seed=4)
    stripped = ae.decoder_only()
    with pytest.raises(ValueError):
        encode(stripped, rng.normal(size=5))
    assert np.array_equal(decode(stripped, np.ones(2)), decode(ae, np.ones(2)))


def test_reconstruction_gap_zero_for_exact_autoencoder():
    # data on a 1-d axis; a hand-built projector reconstructs it exactly
    enc = ModelParams(ModelSpec((2, 1)), [np.array([[1.0, 0.0]])], [np.zeros(1)])
    dec = ModelParams(ModelSpec((1, 2)), [np.array([[1.0], [0.0]])], [np.zeros(2)])
    ae = AutoencoderParams(encoder=enc, decoder=dec)
    X = np.array([[0.5, 0.0], [-2.0, 0.0], [3.25, 0.0]])
    assert reconstruction_gap(ae, X) == 0.0


def test_reconstruction_gap_deterministic():
    ae = init_autoencoder(*make_autoencoder_specs(8, 2), seed=1)
    X = blob_matrix(40)
    assert reconstruction_gap(ae, X) == reconstruction_gap(ae, X)


def test_reconstruction_gap_rejects_empty():
    ae = init_autoencoder(*make_autoencoder_specs(8, 2), seed=1)
    with pytest.raises(ValueError):
        reconstruction_gap(ae, np.zeros((0, 8)))


def test_pretraining_gap_strictly_decreases():
    enc, dec = make_autoencoder_specs(8, 2, hidden_width=16)
    X = blob_matrix(200)
    gaps = [reconstruction_gap(pretrain(enc, dec, X, e, 0.01, 5), X) for e in (0, 10, 20, 30)]
    assert gaps[1] < gaps[0] and gaps[2] < gaps[1] and gaps[3] < gaps[2]


def test_fresh_samples_reconstruct_within_double_training_gap():
    # same mixture (identical component placement), disjoint sample draws
    X_all = blob_matrix(400, seed=9)
    X_train, X_fresh = X_all[:200], X_all[200:]
    enc, dec = make_autoencoder_specs(8, 3, hidden_width=16)
    ae = pretrain(enc, dec, X_train, 60, 0.01, 5)
    assert reconstruction_gap(ae, X_fresh) < 2.0 * reconstruction_gap(ae, X_train)


def test_epoch_prefix_property():
    # training e epochs replays the exact prefix of training e' > e epochs
    enc, dec = make_autoencoder_specs(6, 2)
    X = blob_matrix(60, dim=6, classes=3)
    a10 = pretrain(enc, dec, X, 10, 0.01, 2)
    a10_again = pretrain(enc, dec, X, 10, 0.01, 2)
    assert params_equal(a10.encoder, a10_again.encoder)


def test_batch_helpers_match_single(rng):
    ae = init_autoencoder(*make_autoencoder_specs(5, 2), seed=4)
    X = rng.normal(size=(6, 5))
    E = encode_batch(ae, X)
    for i in range(6):
        np.testing.assert_allclose(E[i], encode(ae, X[i]), rtol=1e-12, atol=1e-15)
    B = decode_batch(ae, E)
    for i in range(6):
        np.testing.assert_allclose(B[i], decode(ae, E[i]), rtol=1e-12, atol=1e-14)
