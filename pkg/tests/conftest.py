# tests/conftest.py

import json

import numpy as np
import pytest

from modules.data_manager import Vocab, encode_pairs, synth_sts, write_stsb
from modules.numerics import default_dtype


@pytest.fixture
def float64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def synth_pairs():
    return synth_sts(24, vocab_size=40, seed=7)


@pytest.fixture
def synth_vocab(synth_pairs):
    return Vocab([f"w{i}" for i in range(40)])


@pytest.fixture
def synth_dataset(synth_pairs, synth_vocab):
    return encode_pairs(synth_vocab, synth_pairs, t_max=8)


@pytest.fixture
def write_run_config(tmp_path):
    """Write a run config JSON under tmp_path and return its path"""
    def write(**sections):
        path = tmp_path / "run.json"
        path.write_text(json.dumps(sections))
        return str(path)
    return write


@pytest.fixture
def stsb_file(tmp_path, synth_pairs):
    path = tmp_path / "train.tsv"
    write_stsb(synth_pairs, str(path))
    return str(path)
