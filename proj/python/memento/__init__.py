# Copyright 2026 The Memento Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Thin Python layer over the C++ core."""

import json as _json

from ._memento import (  # noqa: F401
    Index,
    MementoDoc,
    MementoError,
    MmrCandidate,
    QuantizedEmbedding,
    chunk,
    cosine_similarity,
    decode_docs,
    encode_docs,
    mmr_oracle,
    mmr_select,
    normalized_entropy,
    quantize,
    quantized_cosine,
    render_markdown,
)
from ._memento import run_experiment as _run_experiment


def run_experiment(name, config=None):
    """Run a named experiment; config is a dict (or None for defaults).

    Returns the parsed JSON report.
    """
    text = _run_experiment(name, _json.dumps(config or {}))
    return _json.loads(text)


__all__ = [
    "Index",
    "MementoDoc",
    "MementoError",
    "MmrCandidate",
    "QuantizedEmbedding",
    "chunk",
    "cosine_similarity",
    "decode_docs",
    "encode_docs",
    "mmr_oracle",
    "mmr_select",
    "normalized_entropy",
    "quantize",
    "quantized_cosine",
    "render_markdown",
    "run_experiment",
]
