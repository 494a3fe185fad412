import pytest
from hypothesis import given, settings, strategies as st

from ntpdetect.ingest import END, START, RawSpan
from ntpdetect.miner import (LOG, LOG_MINER, SPAN, SPAN_MINER, UNKNOWN, MinerConfig,
                             TemplateMiner, load_templates, span_descriptor, tokenize)


def test_tokenize():
    assert tokenize("GET http:///v2/images/") == ["GET", "http", "v2", "images"]
    assert tokenize("a=b, c(d)") == ["a", "b", "c", "d"]


def test_span_descriptor():
    assert span_descriptor(RawSpan("t", "s", 0, 1, "rpc.compute.run")) == "rpc.compute.run"
    http = RawSpan("t", "s", 0, 1, "x", "/v2/images/", "http", "GET")
    assert tokenize(span_descriptor(http)) == ["GET", "http", "v2", "images"]
    assert span_descriptor(RawSpan("t", "s", 0, 0, START)) == START


def test_same_message_same_id():
    m = TemplateMiner()
    a = m.mine("user alice logged in")
    assert m.mine("user alice logged in") == a
    assert m.template(a).tokens == ["user", "alice", "logged", "in"]


def test_second_token_routes_at_depth_four():
    m = TemplateMiner(MinerConfig(0.5, 4))
    assert m.mine("user alice logged in") != m.mine("user bob logged in")


def test_merge_into_wildcard():
    # depth 3 routes on the first token only
    m = TemplateMiner(MinerConfig(0.5, 3))
    a = m.mine("user alice logged in")
    assert m.mine("user bob logged in") == a
    assert m.template(a).tokens == ["user", "<*>", "logged", "in"]
    assert m.mine("disk full") != a


def test_ids_start_at_one():
    m = TemplateMiner()
    assert m.mine("x y") == 1
    assert m.mine("p q r") == 2


def test_match_only():
    m = TemplateMiner()
    a = m.mine("user alice logged in")
    before = [t.tokens[:] for t in m.templates]
    assert m.match_only("user alice logged in") == a
    assert m.match_only("one two three four five") == UNKNOWN
    assert [t.tokens for t in m.templates] == before


def test_match_at_exact_threshold():
    m = TemplateMiner(MinerConfig(0.5, 2))
    a = m.mine("alpha beta gamma delta")
    # 2 of 4 positions agree: similarity exactly 0.5
    assert m.match_only("alpha beta x y") == a
    assert m.match_only("alpha x y z") == UNKNOWN


def test_digits_route_to_wildcard():
    m = TemplateMiner(MinerConfig(0.5, 4))
    a = m.mine("job 17 finished ok")
    assert m.mine("job 23 finished ok") == a
    assert m.template(a).tokens == ["job", "<*>", "finished", "ok"]


def test_dump_and_reload(tmp_path):
    m = TemplateMiner(LOG_MINER, LOG)
    for msg in ["a b c", "a b x", "q r", "k l m n"]:
        m.mine(msg)
    m.dump(tmp_path / "t.jsonl")
    frozen = TemplateMiner.load(tmp_path / "t.jsonl", LOG_MINER, LOG)
    assert [t.tokens for t in frozen.templates] == [t.tokens for t in m.templates]
    for msg in ["a b c", "q r", "k l m n", "zz"]:
        assert frozen.match_only(msg) == m.match_only(msg)
    assert load_templates(tmp_path / "t.jsonl", LOG)[0].support_count == 2


def test_span_modality():
    m = TemplateMiner(SPAN_MINER, SPAN)
    s = m.mine_span(RawSpan("t", "a", 0, 0, START))
    assert m.match_span(RawSpan("u", "b", 1, 1, START)) == s
    assert m.mine_span(RawSpan("t", "z", 2, 2, END)) != s


def test_bad_config():
    with pytest.raises(ValueError):
        MinerConfig(0.0, 4)
    with pytest.raises(ValueError):
        TemplateMiner(modality="metric")


words = st.text(alphabet="abcdefgh", min_size=1, max_size=5)


@given(st.lists(st.lists(words, min_size=1, max_size=6).map(" ".join), min_size=1, max_size=40))
@settings(max_examples=60, deadline=None)
def test_wildcard_soundness(messages):
    """Every mined message agrees with its final template at each non-wildcard position."""
    m = TemplateMiner(LOG_MINER)
    ids = [m.mine(msg) for msg in messages]
    for msg, tid in zip(messages, ids):
        tpl = m.template(tid).tokens
        toks = tokenize(msg)
        assert len(tpl) == len(toks)
        assert all(a == "<*>" or a == b for a, b in zip(tpl, toks))
