import numpy as np
import pytest

from oracles import hash_vector
from stub_service import start_stub
from pterisk.embedder import (
    API_KEY_ENV,
    BackendDescriptor,
    BackendError,
    Embedder,
    EmbeddingCache,
    EmbeddingDimensionError,
    HashBackend,
    TokenEmbeddingMatrix,
    hash_token_vector,
    pool,
    tokenize,
)
from pterisk.serializer import serialize_all

# frozen from the pure-python oracle (float32-rounded)
FROZEN = {
    "[CLS]": [0.3212817311286926, -0.1364835500717163, -0.024231916293501854, 0.12327098101377487],
    "icu": [-0.7790915966033936, -0.6651872396469116, -0.16514617204666138, 0.39138853549957275],
    "seizure": [0.09209910780191422, -0.9866945147514343, -0.4572789669036865, 0.09116911888122559],
}


def test_tokenize():
    assert tokenize("ICU stay 7.2 days. Had_seizure!") == ["[CLS]", "icu", "stay", "7", "2", "days", "had", "seizure"]


@pytest.mark.parametrize("token", sorted(FROZEN))
def test_hash_vector_frozen(token):
    assert hash_token_vector(token, 4).tolist() == FROZEN[token]


@pytest.mark.parametrize("dim,seed", [(1, 0), (8, 0), (13, 5), (128, 0), (300, 2)])
def test_hash_vector_matches_oracle(dim, seed):
    for token in ("[CLS]", "craniectomy", "7", "ünïcode"):
        ref = np.array(hash_vector(token, dim, seed), dtype=np.float32)
        got = hash_token_vector(token, dim, seed)
        assert got.dtype == np.float32 and got.tobytes() == ref.tobytes()
        assert np.all(got >= -1.0) and np.all(got <= 1.0)


def test_hash_prefix_consistency_across_dims():
    assert hash_token_vector("icu", 10, 3)[:4].tolist() == hash_token_vector("icu", 4, 3).tolist()
    assert hash_token_vector("icu", 10, 3)[8:].tolist() == pytest.approx([-0.95640031946823, 0.9286335222423077], abs=1e-7)


def test_pooling_definitions():
    m = TokenEmbeddingMatrix(("[CLS]", "a", "b"), np.array([[1, -1], [3, 0], [2, 5]], dtype=np.float32))
    assert pool(m, "mean").vector.tolist() == [2.0, pytest.approx(4 / 3)]
    assert pool(m, "cls").vector.tolist() == [1.0, -1.0]
    assert pool(m, "max").vector.tolist() == [3.0, 5.0]
    with pytest.raises(ValueError):
        pool(m, "median")


def test_token_matrix_validation():
    with pytest.raises(ValueError):
        TokenEmbeddingMatrix(("a",), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        TokenEmbeddingMatrix(("a",), np.array([[np.nan]]))


def test_descriptor_validation():
    with pytest.raises(ValueError):
        BackendDescriptor("x", 0)
    with pytest.raises(ValueError):
        BackendDescriptor("x", 4, kind="remote")
    with pytest.raises(ValueError):
        BackendDescriptor("x", 4, kind="remote", endpoint="http://h", level="pooled")
    d = BackendDescriptor("x", 4, kind="remote", endpoint="http://h", level="pooled", service_pooling="cls")
    assert d.pooling_strategies == ("cls",)


def test_embed_subject_order_and_strategy(small_cohort, hash_descriptor):
    e = Embedder(hash_descriptor)
    ps = serialize_all(small_cohort.subjects[0])
    pooled = e.embed_subject(list(reversed(ps)), "mean")
    assert [p.aspect for p in pooled] == [p.aspect for p in ps]
    for p, para in zip(pooled, ps):
        rows = np.stack([hash_token_vector(t, 128) for t in tokenize(para.text)])
        assert np.allclose(p.vector, rows.astype(np.float64).mean(axis=0), atol=1e-6)
    with pytest.raises(ValueError):
        e.embed_subject(ps[:5])


def test_cache_roundtrip_and_hits(tmp_path, hash_descriptor):
    cache = EmbeddingCache(tmp_path / "c")
    texts = ["alpha beta", "gamma", "alpha beta"]
    first = Embedder(hash_descriptor, cache).embed_texts(texts)
    assert (cache.hits, cache.misses) == (0, 2)
    assert len(cache) == 2
    cache2 = EmbeddingCache(tmp_path / "c")
    second = Embedder(hash_descriptor, cache2).embed_texts(texts)
    assert (cache2.hits, cache2.misses) == (2, 0)
    assert first == second


def test_cache_key_separates_backends(tmp_path):
    assert EmbeddingCache.key("a", "t") != EmbeddingCache.key("b", "t")
    assert EmbeddingCache.key("a", "t") == EmbeddingCache.key("a", "t")


def test_corrupt_cache_entry_is_a_miss(tmp_path, hash_descriptor, caplog):
    cache = EmbeddingCache(tmp_path)
    m = HashBackend(hash_descriptor).embed_batch(["hello"])[0]
    cache.store("hash-128", "hello", m)
    path = cache.path(cache.key("hash-128", "hello"))
    path.write_bytes(path.read_bytes()[:-7])
    assert cache.lookup("hash-128", "hello") is None
    assert cache.misses == 1 and "corrupt" in caplog.text
    assert not list(tmp_path.glob("*/*.tmp"))


def test_empty_text_rejected(hash_descriptor):
    with pytest.raises(ValueError):
        Embedder(hash_descriptor).embed_texts([""])


# ---------------------------------------------------------------------------
# remote backend against a local stub service


@pytest.fixture
def stub_server():
    servers = []

    def start(**kw):
        stub, srv, url = start_stub(**kw)
        servers.append(srv)
        return stub, url

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


def _remote(url, **kw):
    return BackendDescriptor("stub", 4, kind="remote", endpoint=url, backoff=0.0, max_batch=2, **kw)


def test_remote_token_level_matches_local_hash(stub_server, monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret")
    stub, url = stub_server()
    texts = ["a b", "c", "d e f", "a b"]
    got = Embedder(_remote(url)).embed_texts(texts)
    local = Embedder(BackendDescriptor("h", 4, seed=9)).embed_texts(texts)
    assert got == local
    assert len(stub.requests) == 2  # three distinct texts, batches of two
    assert all(auth == "Bearer secret" for _, auth in stub.requests)


def test_remote_pooled_level(stub_server):
    stub, url = stub_server(level="pooled")
    e = Embedder(_remote(url, level="pooled", service_pooling="mean"))
    v = e.pooled_matrix(["x y"], "mean")
    assert v.shape == (1, 4)
    with pytest.raises(ValueError):
        e.pooled_matrix(["x y"], "max")


def test_remote_retries_then_succeeds(stub_server):
    stub, url = stub_server(fail_first=2)
    out = Embedder(_remote(url)).embed_texts(["q"])
    assert out[0].tokens == ("[CLS]", "q")
    assert len(stub.requests) == 3


def test_remote_gives_up_after_retries(stub_server, tmp_path):
    stub, url = stub_server(fail_first=100)
    cache = EmbeddingCache(tmp_path)
    with pytest.raises(BackendError) as info:
        Embedder(_remote(url, retries=2), cache).embed_texts(["q"])
    assert info.value.attempts == 3
    assert len(cache) == 0


def test_remote_client_error_is_fatal(stub_server):
    stub, url = stub_server(fail_first=100, status=400)
    with pytest.raises(BackendError):
        Embedder(_remote(url)).embed_texts(["q"])
    assert len(stub.requests) == 1


def test_remote_dimension_mismatch(stub_server):
    stub, url = stub_server(wrong_dim=True)
    with pytest.raises(EmbeddingDimensionError):
        Embedder(_remote(url)).embed_texts(["q"])
