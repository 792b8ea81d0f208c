# Copyright 2026 The MDDM Authors
# SPDX-License-Identifier: Apache-2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Masked discrete diffusion over joint report/image token sequences.

Configs are plain dicts with the same keys as the JSON config files. Token
sequences are int64 arrays of shape (n, len_report + len_image).
"""

import json

import numpy as np

from . import _mddm
from ._mddm import (
    ConfigError,
    InvalidArgument,
    IoError,
    NumericalError,
    bleu,
    cumulative_matrix,
    detokenize_report,
    loss_weight,
    retention,
    rouge_l,
)

__all__ = [
    "ConfigError",
    "InvalidArgument",
    "IoError",
    "Model",
    "NumericalError",
    "bleu",
    "config_hash",
    "cumulative_matrix",
    "default_config",
    "detokenize_report",
    "load_config",
    "loss_weight",
    "retention",
    "rouge_l",
    "sample_data",
    "train",
]


def _dump(config):
    return json.dumps(config if config is not None else {})


def default_config():
    return json.loads(_mddm.default_config())


def load_config(path):
    return json.loads(_mddm.load_config(str(path)))


def config_hash(config=None):
    """SHA-256 of the canonical JSON form (missing keys take defaults)."""
    return _mddm.config_hash(_dump(config))


def sample_data(num, seed, config=None):
    """Ground-truth joint sequences from the toy world."""
    return _mddm.sample_data(_dump(config), num, seed)


class Model:
    """A trained backbone or the exact oracle posterior."""

    def __init__(self, impl):
        self._impl = impl

    @classmethod
    def load(cls, path):
        return cls(_mddm.Model.load(str(path)))

    @classmethod
    def oracle(cls, config=None):
        return cls(_mddm.Model.oracle(_dump(config)))

    @property
    def config(self):
        return json.loads(self._impl.config_json)

    @property
    def config_hash(self):
        return self._impl.config_hash

    @property
    def step(self):
        return self._impl.step

    def generate(self, mode="joint", num=1, seed=0, condition=None, threads=1):
        """mode is one of joint, t2i, i2t, prompted."""
        return self._impl.generate(mode, num, seed, list(condition or []), threads)

    def evaluate(self, suites="all", threads=1):
        return dict(self._impl.evaluate(suites, threads))

    def predict(self, x_t, t):
        """Per-position x0 probabilities over the real tokens, shape (n, len, K)."""
        return self._impl.predict(np.asarray(x_t, dtype=np.int64), float(t))

    def save(self, path):
        self._impl.save(str(path))


def train(config=None, out_dir="", stop_at=-1):
    """Trains from scratch; out_dir receives metrics.csv and checkpoints."""
    return Model(_mddm.train(_dump(config), str(out_dir), stop_at))
