import numpy as np
import pytest

from topicmix.clustering import two_level_fit
from topicmix.corpus import Corpus, Document, tokenize_count
from topicmix.embedding import embed_local
from topicmix.errors import DataError, ServiceError
from topicmix.taxonomy import (ChatRequest, HttpChatClient, PromptCache,
                               StubChatClient, TopicTaxonomy, abstract_topic,
                               extract_taxonomy, hash8, load_taxonomy,
                               merge_topics, save_taxonomy, summarize_cluster)


def themed_corpus(n_per_theme=30, seed=0):
    themes = {
        "metal": ["forge", "anvil", "ingot", "alloy", "smelt", "quench"],
        "ocean": ["tide", "reef", "kelp", "current", "plankton", "swell"],
        "desert": ["dune", "oasis", "mirage", "cactus", "scorpion", "arid"],
    }
    rng = np.random.default_rng(seed)
    docs = []
    i = 0
    for theme, pool in sorted(themes.items()):
        for _ in range(n_per_theme):
            words = [pool[int(rng.integers(len(pool)))] for _ in range(20)]
            text = " ".join(words)
            docs.append(Document(id=f"{theme}:{i:03d}", text=text, source="web",
                                 token_count=tokenize_count(text)))
            i += 1
    return Corpus.from_documents(docs)


# ---------------------------------------------------------------------------
# stub client contracts
# ---------------------------------------------------------------------------

def test_stub_summary_contract():
    stub = StubChatClient()
    docs = ["alpha beta gamma", "delta epsilon zeta eta"]
    summary = summarize_cluster(docs, stub)
    assert summary == "SUMMARY[alpha beta gamma delta epsilon]"


def test_stub_abstract_contract():
    stub = StubChatClient()
    summaries = ["one summary", "another summary"]
    label = abstract_topic(summaries, stub)
    assert label == f"TOPIC[{hash8('one summary' + chr(10) + 'another summary')}]"


def test_stub_pipeline_is_deterministic():
    corpus = themed_corpus()
    X = embed_local(corpus, dim=32, seed=1)
    model = two_level_fit(X, k1=6, k2=3, seed=1)
    tax1, summ1 = extract_taxonomy(corpus, model, StubChatClient(), m=2, seed=5)
    tax2, summ2 = extract_taxonomy(corpus, model, StubChatClient(), m=2, seed=5)
    assert tax1 == tax2
    assert summ1 == summ2


# ---------------------------------------------------------------------------
# summarize / abstract
# ---------------------------------------------------------------------------

def test_summarize_cluster_doc_count_limits():
    stub = StubChatClient()
    with pytest.raises(DataError):
        summarize_cluster([], stub)
    with pytest.raises(DataError):
        summarize_cluster(["x"] * 11, stub)


def test_summarize_truncates_to_char_budget():
    stub = StubChatClient()
    long_doc = "longword " * 500
    summary = summarize_cluster([long_doc], stub, char_budget=20)
    # only the first 20 characters survive: "longword longword lo"
    assert summary == "SUMMARY[longword longword lo]"


def test_cache_hit_issues_no_request():
    stub = StubChatClient()
    cache = {}
    summarize_cluster(["a b c"], stub, cache=cache)
    assert stub.requests_issued == 1
    summarize_cluster(["a b c"], stub, cache=cache)
    assert stub.requests_issued == 1
    summarize_cluster(["different text"], stub, cache=cache)
    assert stub.requests_issued == 2


def test_prompt_cache_persists(tmp_path):
    path = tmp_path / "cache.json"
    cache = PromptCache(path)
    stub = StubChatClient()
    summarize_cluster(["persist me"], stub, cache=cache)
    cache.save()
    fresh = PromptCache(path)
    summarize_cluster(["persist me"], StubChatClient(), cache=fresh)
    assert len(fresh) == 1


def test_abstract_topic_enforces_word_limit():
    class Wordy:
        requests_issued = 0

        def complete(self, req):
            return type("R", (), {"text": "one two three four five six seven eight nine ten",
                                  "finish_reason": "stop"})()

    label = abstract_topic(["s"], Wordy())
    assert label == "one two three four five six seven eight"


def test_abstract_topic_summary_limit():
    with pytest.raises(DataError):
        abstract_topic(["s"] * 51, StubChatClient())


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------

def test_merge_identity_when_m_equals_fine_count():
    stub = StubChatClient()
    tax = merge_topics(["alpha", "beta", "gamma"], m=3, client=stub)
    assert stub.requests_issued == 0
    assert tax.final_topics == ("alpha", "beta", "gamma")
    assert tax.fine_to_final == {"alpha": "alpha", "beta": "beta", "gamma": "gamma"}


def test_merge_with_stub_round_robin():
    fine = [f"topic {i}" for i in range(6)]
    tax = merge_topics(fine, m=2, client=StubChatClient())
    assert tax.m_topic == 2
    assert set(tax.final_topics) == {"Group 1", "Group 2"}
    assert tax.final_of_cluster(0) == "Group 1"
    assert tax.final_of_cluster(1) == "Group 2"


def test_merge_rejects_m_above_fine_count():
    with pytest.raises(DataError):
        merge_topics(["a", "b"], m=3, client=StubChatClient())


def test_merge_parse_failure_reports_lines():
    class Garbage:
        def complete(self, req):
            return type("R", (), {"text": "no tabs here\nanother bad line",
                                  "finish_reason": "stop"})()

    with pytest.raises(DataError, match="parse failure"):
        merge_topics(["a", "b", "c"], m=2, client=Garbage())


def test_merge_strips_markdown_fences():
    class Fenced:
        def complete(self, req):
            return type("R", (), {
                "text": "```\na\tLeft\nb\tRight\nc\tLeft\n```",
                "finish_reason": "stop"})()

    tax = merge_topics(["a", "b", "c"], m=2, client=Fenced())
    assert tax.fine_to_final == {"a": "Left", "b": "Right", "c": "Left"}


def test_merge_unmapped_fine_topics_fall_to_others():
    class Partial:
        def complete(self, req):
            return type("R", (), {"text": "a\tStuff\nb\tStuff", "finish_reason": "stop"})()

    tax = merge_topics(["a", "b", "c"], m=2, client=Partial())
    assert tax.fine_to_final["c"] == "Others"
    assert "Others" in tax.final_topics


def test_taxonomy_validation():
    with pytest.raises(DataError, match="never used"):
        TopicTaxonomy(fine_topics=("a",), final_topics=("X", "Y"),
                      fine_to_final={"a": "X"}, cluster_to_fine={0: "a"})
    with pytest.raises(DataError, match="no final topic"):
        TopicTaxonomy(fine_topics=("a", "b"), final_topics=("X",),
                      fine_to_final={"a": "X"}, cluster_to_fine={0: "a", 1: "b"})


def test_taxonomy_json_round_trip(tmp_path):
    tax = merge_topics([f"t{i}" for i in range(5)], m=2, client=StubChatClient())
    save_taxonomy(tax, tmp_path / "tax.json")
    assert load_taxonomy(tmp_path / "tax.json") == tax


# ---------------------------------------------------------------------------
# full extraction
# ---------------------------------------------------------------------------

def test_request_count_bounded_by_k1_k2_plus_one():
    corpus = themed_corpus()
    X = embed_local(corpus, dim=32, seed=1)
    model = two_level_fit(X, k1=6, k2=3, seed=1)
    stub = StubChatClient()
    tax, summaries = extract_taxonomy(corpus, model, stub, m=2, seed=0)
    assert stub.requests_issued <= model.k1 + model.k2 + 1
    assert len(summaries) == model.k1
    assert len(tax.fine_topics) == model.k2
    assert tax.m_topic == 2
    # every level-2 cluster resolves to a final topic
    for j in range(model.k2):
        assert tax.final_of_cluster(j) in tax.final_topics


# ---------------------------------------------------------------------------
# HTTP chat client
# ---------------------------------------------------------------------------

def test_http_chat_client_round_trip(api_server):
    client = HttpChatClient(api_server.url, retry_base=0.01)
    reply = client.complete(ChatRequest(system="sys", user="hello there"))
    assert reply.text.startswith("echo:")
    assert api_server.requests[0]["body"]["temperature"] == 0.0


def test_http_chat_client_sends_token(api_server, monkeypatch):
    monkeypatch.setenv("MIX_CHAT_TOKEN", "chat-token")
    client = HttpChatClient(api_server.url)
    client.complete(ChatRequest(system="s", user="u"))
    assert api_server.requests[0]["auth"] == "Bearer chat-token"


def test_http_chat_client_retries_then_fails(api_server):
    api_server.fail_next = 99
    client = HttpChatClient(api_server.url, retry_base=0.01)
    with pytest.raises(ServiceError):
        client.complete(ChatRequest(system="s", user="u"))
    assert len(api_server.requests) == 5
