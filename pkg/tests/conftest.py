"""Shared builders for small deterministic fixtures."""
from __future__ import annotations

import numpy as np
import pytest

from fedagg.autoencoder import AutoencoderParams, init_autoencoder, make_autoencoder_specs
from fedagg.data import Dataset
from fedagg.nn_core import ModelParams
from fedagg.protocol import EmbeddingRecord, LogitsPacket, extract_logits


def make_blob_dataset(classes=3, input_dim=4, n=60, seed=0, spread=1.0) -> Dataset:
    from fedagg.data import generate_synthetic

    return generate_synthetic(classes, input_dim, n, spread, seed)


def random_ae(input_dim=4, embedding_dim=2, seed=0) -> AutoencoderParams:
    enc, dec = make_autoencoder_specs(input_dim, embedding_dim)
    return init_autoencoder(enc, dec, seed)


def random_records(
    n=6, embedding_dim=2, classes=3, origin="dev-000", seed=0
) -> list[EmbeddingRecord]:
    rng = np.random.default_rng(seed)
    return [
        EmbeddingRecord(
            eps=rng.normal(size=embedding_dim),
            label=int(rng.integers(classes)),
            origin_leaf=origin,
            sample_id=i,
        )
        for i in range(n)
    ]


def teacher_packet(
    records, teacher: ModelParams, ae: AutoencoderParams
) -> LogitsPacket:
    return extract_logits(teacher, ae, records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
