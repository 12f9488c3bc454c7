import numpy as np
import pytest

from topicmix.corpus import Document, tokenize_count
from topicmix.embedding import (EmbeddingMatrix, embed_local, embed_remote,
                                local_features, read_embeddings,
                                write_embeddings)
from topicmix.errors import DataError, ServiceError


def doc(i, text):
    return Document(id=f"d{i}", text=text, source="s", token_count=tokenize_count(text))


# ---------------------------------------------------------------------------
# local featurizer
# ---------------------------------------------------------------------------

def test_local_identical_texts_identical_rows():
    mat = embed_local([doc(0, "red green blue"), doc(1, "red green blue")], dim=16, seed=3)
    assert np.array_equal(mat.vectors[0], mat.vectors[1])


def test_local_is_bag_of_words():
    a = local_features("one two three four", 32, seed=0)
    b = local_features("four three two one", 32, seed=0)
    assert np.array_equal(a, b)


def test_local_pure_function_of_inputs():
    assert np.array_equal(local_features("x y z", 8, 5), local_features("x y z", 8, 5))
    assert not np.array_equal(local_features("x y z", 8, 5), local_features("x y z", 8, 6))


def test_local_empty_text_maps_to_basis_vector():
    vec = local_features("", 8, seed=0)
    expected = np.zeros(8, dtype=np.float32)
    expected[0] = 1.0
    assert np.array_equal(vec, expected)


def test_local_rows_sorted_by_id_and_unit_norm():
    docs = [doc(i, f"tok{i} tok{i + 1} tok{i + 2}") for i in (3, 1, 2)]
    mat = embed_local(docs, dim=64, seed=0)
    assert mat.ids == ("d1", "d2", "d3")
    norms = np.linalg.norm(mat.vectors.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-6)


def test_local_disjoint_vocabularies_nearly_orthogonal():
    # verified rate over 1000 seeded pairs is 100%; require >= 99%
    hits = 0
    for trial in range(1000):
        a = local_features(" ".join(f"worda{trial}_{i}" for i in range(20)), 64, seed=trial)
        b = local_features(" ".join(f"wordb{trial}_{i}" for i in range(20)), 64, seed=trial)
        if abs(float(np.dot(a, b))) < 0.5:
            hits += 1
    assert hits >= 990


def test_local_dim_too_small():
    with pytest.raises(DataError):
        embed_local([doc(0, "a")], dim=1)


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    mat = embed_local([doc(i, f"word{i} text here") for i in range(5)], dim=12, seed=1)
    path = tmp_path / "vecs.emb"
    write_embeddings(path, mat)
    back = read_embeddings(path)
    assert back.ids == mat.ids
    assert back.vectors.tobytes() == mat.vectors.tobytes()
    # second round trip is also bit-exact (normalization is idempotent)
    write_embeddings(tmp_path / "vecs2.emb", back)
    again = read_embeddings(tmp_path / "vecs2.emb")
    assert again.vectors.tobytes() == back.vectors.tobytes()


def test_write_normalizes_unnormalized_rows(tmp_path):
    mat = EmbeddingMatrix(ids=("a", "b"),
                          vectors=np.array([[3.0, 4.0], [0.0, 2.0]], dtype=np.float32))
    path = tmp_path / "n.emb"
    write_embeddings(path, mat)
    back = read_embeddings(path)
    norms = np.linalg.norm(back.vectors.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-6)
    assert back.vectors[0] == pytest.approx([0.6, 0.8])


def test_write_zero_row_rejected(tmp_path):
    mat = EmbeddingMatrix(ids=("a",), vectors=np.zeros((1, 4), dtype=np.float32))
    with pytest.raises(DataError, match="zero"):
        write_embeddings(tmp_path / "z.emb", mat)


def test_read_bad_magic(tmp_path):
    path = tmp_path / "junk.emb"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        read_embeddings(path)


def test_take_missing_id():
    mat = embed_local([doc(0, "a b")], dim=8)
    with pytest.raises(DataError, match="without embedding"):
        mat.take(["d0", "ghost"])


# ---------------------------------------------------------------------------
# remote service
# ---------------------------------------------------------------------------

def test_remote_shape_and_norm(api_server):
    mat = embed_remote([doc(0, "first text"), doc(1, "second text")],
                       api_server.url, batch=2)
    assert mat.vectors.shape == (2, 4)
    norms = np.linalg.norm(mat.vectors.astype(np.float64), axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-6)


def test_remote_gives_up_after_five_failures(api_server):
    api_server.fail_next = 5
    with pytest.raises(ServiceError, match="after 5 attempts"):
        embed_remote([doc(0, "x")], api_server.url, batch=1, retry_base=0.01)


def test_remote_recovers_after_transient_failures(api_server):
    api_server.fail_next = 4
    mat = embed_remote([doc(0, "x")], api_server.url, batch=1, retry_base=0.01)
    assert mat.vectors.shape == (1, 4)


def test_remote_nonretryable_fails_fast(api_server):
    api_server.fail_next = 1
    api_server.fail_status = 400
    with pytest.raises(ServiceError, match="HTTP 400"):
        embed_remote([doc(0, "x")], api_server.url, batch=1, retry_base=0.01)
    assert len(api_server.requests) == 1


def test_remote_rows_sorted_by_id_despite_completion_order(api_server):
    # the first batch stalls so the second completes first
    api_server.stall_first = 0.3
    docs = [doc(i, f"text number {i}") for i in range(4)]
    mat = embed_remote(docs, api_server.url, batch=2, max_in_flight=2)
    assert mat.ids == ("d0", "d1", "d2", "d3")
    solo = embed_remote(docs, api_server.url, batch=4)
    assert np.allclose(mat.vectors, solo.vectors, atol=1e-6)


def test_remote_dimension_mismatch(api_server):
    api_server.dim_per_request = [4, 3]
    docs = [doc(i, f"t{i}") for i in range(4)]
    with pytest.raises(ServiceError, match="dimension mismatch"):
        embed_remote(docs, api_server.url, batch=2, max_in_flight=1)


def test_remote_sends_auth_token(api_server, monkeypatch):
    monkeypatch.setenv("MIX_EMBED_TOKEN", "sekrit")
    embed_remote([doc(0, "x")], api_server.url, batch=1)
    assert api_server.requests[0]["auth"] == "Bearer sekrit"
