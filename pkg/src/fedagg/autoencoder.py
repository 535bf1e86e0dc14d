"""Lightweight pre-trained encoder/decoder pair.

Leaves encode private samples into low-dimensional embeddings; every node
uses the shared decoder to regenerate bridge samples from embeddings. The
pair is pre-trained once per experiment on a public dataset and is
read-only afterwards, so its parameters can be shared freely across nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn_core import (
    Array,
    ModelParams,
    ModelSpec,
    SquaredErrorHead,
    backward_through,
    forward,
    forward_batch,
    init_params,
    sgd_step,
)
from .seeding import derive_seed

# Keeps the pair "extremely lightweight" relative to the task models.
DEFAULT_PARAM_BUDGET = 5000


@dataclass
class AutoencoderParams:
    """Encoder (input -> embedding) and decoder (embedding -> input) nets.

    Non-leaf nodes deploy decoder-only copies (``encoder is None``); only
    leaves keep the encoder. Dimensional consistency between the two halves
    is validated whenever both are present.
    """

    encoder: ModelParams | None
    decoder: ModelParams

    def __post_init__(self) -> None:
        if self.encoder is not None:
            enc, dec = self.encoder.spec, self.decoder.spec
            if enc.output_dim != dec.input_dim:
                raise ValueError(
                    f"embedding dim mismatch: encoder emits {enc.output_dim}, "
                    f"decoder expects {dec.input_dim}"
                )
            if dec.output_dim != enc.input_dim:
                raise ValueError(
                    f"decoder emits {dec.output_dim} but encoder consumes {enc.input_dim}"
                )

    @property
    def embedding_dim(self) -> int:
        return self.decoder.spec.input_dim

    @property
    def input_dim(self) -> int:
        return self.decoder.spec.output_dim

    def decoder_only(self) -> "AutoencoderParams":
        """Deployment copy for non-leaf nodes (shared, read-only decoder)."""
        return AutoencoderParams(encoder=None, decoder=self.decoder)


def default_embedding_dim(input_dim: int) -> int:
    return max(2, input_dim // 4)


def make_autoencoder_specs(
    input_dim: int,
    embedding_dim: int | None = None,
    hidden_width: int | None = None,
    activation: str = "relu",
    param_budget: int = DEFAULT_PARAM_BUDGET,
) -> tuple[ModelSpec, ModelSpec]:
    """Symmetric one-hidden-layer encoder/decoder specs under a size budget."""
    emb = default_embedding_dim(input_dim) if embedding_dim is None else int(embedding_dim)
    if emb >= input_dim:
        raise ValueError(
            f"embedding dim {emb} must be strictly smaller than input dim {input_dim}"
        )
    hidden = max(8, input_dim) if hidden_width is None else int(hidden_width)
    enc = ModelSpec((input_dim, hidden, emb), activation)
    dec = ModelSpec((emb, hidden, input_dim), activation)
    total = enc.param_count + dec.param_count
    if total > param_budget:
        raise ValueError(
            f"autoencoder would have {total} parameters, over the budget {param_budget}"
        )
    return enc, dec


def init_autoencoder(enc_spec: ModelSpec, dec_spec: ModelSpec, seed: int) -> AutoencoderParams:
    return AutoencoderParams(
        encoder=init_params(enc_spec, derive_seed(seed, "enc")),
        decoder=init_params(dec_spec, derive_seed(seed, "dec")),
    )


def _as_matrix(dataset: object, dim: int) -> Array:
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] != dim:
        raise ValueError(f"expected a nonempty (n, {dim}) sample matrix, got {X.shape}")
    return X


def pretrain(
    enc_spec: ModelSpec,
    dec_spec: ModelSpec,
    public_dataset: object,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 16,
) -> AutoencoderParams:
    """Train the pair on reconstruction MSE over a public dataset.

    Deterministic for a fixed seed: initialization and every epoch's shuffle
    are derived streams, so training for e epochs replays the exact prefix of
    training for e' > e epochs.
    """
    X = _as_matrix(public_dataset, enc_spec.input_dim)
    ae = init_autoencoder(enc_spec, dec_spec, seed)
    enc, dec = ae.encoder, ae.decoder
    assert enc is not None
    dim = float(X.shape[1])
    for epoch in range(int(epochs)):
        order = np.random.default_rng(derive_seed(seed, "shuffle", epoch)).permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            xb = X[idx]
            emb = forward_batch(enc, xb)
            recon = forward_batch(dec, emb)
            # d/dz of mean-over-(batch, dims) squared error.
            delta = 2.0 * (recon - xb) / (dim * len(idx))
            g_dec, d_emb = backward_through(dec, emb, delta)
            g_enc, _ = backward_through(enc, xb, d_emb)
            dec = sgd_step(dec, g_dec, lr)
            enc = sgd_step(enc, g_enc, lr)
    return AutoencoderParams(encoder=enc, decoder=dec)


def encode(ae: AutoencoderParams, x: Array) -> Array:
    if ae.encoder is None:
        raise ValueError("this deployment holds no encoder (non-leaf copy)")
    return forward(ae.encoder, x)


def encode_batch(ae: AutoencoderParams, X: Array) -> Array:
    if ae.encoder is None:
        raise ValueError("this deployment holds no encoder (non-leaf copy)")
    return forward_batch(ae.encoder, X)


def decode(ae: AutoencoderParams, eps: Array) -> Array:
    return forward(ae.decoder, eps)


def decode_batch(ae: AutoencoderParams, E: Array) -> Array:
    return forward_batch(ae.decoder, E)


def reconstruction_gap(ae: AutoencoderParams, dataset: object) -> float:
    """Mean over samples of the squared reconstruction error ||dec(enc(x)) - x||^2."""
    X = _as_matrix(dataset, ae.input_dim)
    recon = decode_batch(ae, encode_batch(ae, X))
    return float(np.mean(np.sum((recon - X) ** 2, axis=1)))


# Convenience: the autoencoder training objective as a head, for tests that
# want to cross-check pretraining steps against the generic gradient path.
def reconstruction_head(x: Array) -> SquaredErrorHead:
    return SquaredErrorHead(np.asarray(x, dtype=np.float64))
