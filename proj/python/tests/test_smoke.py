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

import math
import os
import random
import subprocess

import pytest

import memento


def rand_vec(rng, d):
    return [rng.gauss(0.0, 1.0) for _ in range(d)]


def test_cosine_and_quantize():
    assert memento.cosine_similarity([1, 0], [1, 1]) == pytest.approx(1 / math.sqrt(2))
    q = memento.quantize([3.0, 4.0])
    assert q.codes == [76, 102]
    assert q.norm == pytest.approx(5.0)
    back = q.dequantize()
    assert back[0] == pytest.approx(3.0, abs=0.05)
    assert memento.quantized_cosine(q, q) == pytest.approx(1.0)


def test_bad_dims_raise_with_code():
    with pytest.raises(memento.MementoError) as info:
        memento.cosine_similarity([1, 0], [1, 0, 0])
    assert info.value.code == "DimensionMismatch"


def test_mmr_matches_oracle():
    rng = random.Random(3)
    cands = [(i + 1, rand_vec(rng, 8), rand_vec(rng, 8)) for i in range(40)]
    q, a = rand_vec(rng, 8), rand_vec(rng, 8)
    for alpha, beta in [(0, 0), (0.3, 0), (0.05, 0.8), (0.05, 0.95)]:
        s = memento.mmr_select(q, a, cands, alpha, beta, 0.25)
        o = memento.mmr_oracle(q, a, cands, alpha, beta, 0.25)
        assert s["selected"] == o["selected"]
        assert len(s["selected"]) == 10


def test_mmr_hand_case():
    cands = [memento.MmrCandidate(1, [1, 0]), memento.MmrCandidate(2, [0.95, 0.31]),
             memento.MmrCandidate(3, [0, 1])]
    s = memento.mmr_select([1, 0], None, cands, 0.45, 0.0, 0.5)
    assert s["selected"] == [1, 3]


def test_chunk_index_roundtrip(tmp_path):
    rng = random.Random(5)
    dailies = [(f"u{u}", 0, day, rand_vec(rng, 16)) for u in range(30) for day in range(21)]
    docs = memento.chunk(dailies, 7)
    assert len(docs) == 90
    assert memento.decode_docs(memento.encode_docs(docs))[0].doc_id == docs[0].doc_id
    idx = memento.Index.build(docs, n_clusters=4, seed=1)
    assert len(idx) == 90
    q = docs[10].embedding.dequantize()
    exact = idx.knn(q, 5, n_probe=idx.n_clusters)
    assert exact == idx.flat_scan(q, 5)
    assert exact[0][0] == docs[10].doc_id
    path = str(tmp_path / "idx.bin")
    idx.save(path)
    again = memento.Index.load(path)
    assert again.checksum == idx.checksum
    sel = again.retrieve_with_mmr(q, alpha=0.5, filter_rate=0.25, candidate_k=20)
    assert len(sel["selected"]) == 5


def test_normalized_entropy():
    ne = memento.normalized_entropy([0.5, 0.5], [1, 0])
    assert ne == pytest.approx(1.0, abs=1e-12)
    assert memento.normalized_entropy([0.9, 0.1], [1, 0]) == pytest.approx(
        -math.log(0.9) / math.log(2), abs=1e-12)


TINY = {
    "generator": {"n_users": 20, "n_days": 120, "dim": 8, "n_ads": 20},
    "seeds": [1],
    "mmr_grid": {"configs": [{"rate": 0.5, "alpha": 0.3, "beta": 0.0}]},
}


def test_tiny_experiment_is_deterministic():
    a = memento.run_experiment("MmrGrid", TINY)
    b = memento.run_experiment("MmrGrid", TINY)
    assert a == b
    assert a["records"]
    assert "MmrGrid" in memento.render_markdown(memento._json.dumps(a))


def test_unknown_config_key_rejected():
    with pytest.raises(memento.MementoError) as info:
        memento.run_experiment("MmrGrid", {"nope": 1})
    assert info.value.code == "InvalidConfig"


@pytest.mark.skipif(not os.environ.get("MEMENTO_CLI"), reason="CLI path not set")
def test_cli_exit_codes(tmp_path):
    cli = os.environ["MEMENTO_CLI"]
    assert subprocess.run([cli], capture_output=True).returncode == 1
    missing = subprocess.run([cli, "report", "--in", str(tmp_path / "none.json")],
                             capture_output=True)
    assert missing.returncode == 3
