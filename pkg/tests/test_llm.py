import http.server
import json
import threading
from datetime import date

import pytest
from hypothesis import given, settings, strategies as st

from epix.corpus import Document, Source
from epix.errors import (
    AuthError,
    BudgetExhausted,
    CacheMiss,
    ConfigError,
    ExtractionFailed,
    NoIsland,
    TransportError,
)
from epix.llm import (
    ANSWER_RESERVE_TOKENS,
    CHARS_PER_TOKEN,
    MESSAGE_OVERHEAD_TOKENS,
    ModelKind,
    ModelProfile,
    PromptTemplate,
    Demonstration,
    Sampling,
    Transport,
    TransportMode,
    build_messages,
    complete,
    default_registry,
    estimate_tokens,
    extract_documents,
    extract_json_island,
    extract_with_llm,
    load_template,
    parse_fields,
    request_digest,
)


def _doc(body, doc_id="d1"):
    return Document(id=doc_id, source=Source.PROMED, title="t", body=body)


# --- model registry ----------------------------------------------------------


def test_registry_profiles():
    reg = default_registry(endpoint="http://example/v1")
    billion = 1_000_000_000
    expected = {
        "pythia-12b": (4096, 12 * billion, ModelKind.OPEN),
        "mpt-30b-chat": (8192, 30 * billion, ModelKind.OPEN),
        "llama-2-70b-chat": (4096, 70 * billion, ModelKind.OPEN),
        "mistral-7b-openorca": (4096, 7 * billion, ModelKind.OPEN),
        "zephyr-7b-alpha": (4096, 7 * billion, ModelKind.OPEN),
        "gpt-35-turbo-16k": (16384, None, ModelKind.COMMERCIAL),
        "gpt-4-32k": (32768, None, ModelKind.COMMERCIAL),
    }
    assert {
        name: (p.context_length, p.parameter_count, p.kind) for name, p in reg.items()
    } == expected


def test_profile_requires_positive_context():
    with pytest.raises(ConfigError):
        ModelProfile("x", 0, None, "http://e", ModelKind.OPEN)


# --- templates and message building ----------------------------------------------


def test_template_presets():
    zero = load_template("zero-shot")
    assert zero.shots == 0
    three = load_template("three-shot")
    assert three.shots == 3
    for demo in three.demonstrations:
        assert set(demo.answer) == set(zero.output_keys)
    with pytest.raises(ConfigError):
        load_template("five-shot")


def test_template_rejects_mismatched_demo_keys():
    with pytest.raises(ConfigError):
        PromptTemplate(
            name="bad",
            instruction="x",
            demonstrations=(Demonstration("e", {"virus": "a"}),),
        )


def test_zero_shot_message_structure():
    profile = default_registry()["pythia-12b"]
    build = build_messages(_doc("Short body."), load_template("zero-shot"), profile)
    assert [m["role"] for m in build.messages] == ["system", "user"]
    assert build.messages[-1]["content"] == "Short body."
    assert not build.truncated


def test_three_shot_message_structure():
    profile = default_registry()["pythia-12b"]
    build = build_messages(_doc("Short body."), load_template("three-shot"), profile)
    assert len(build.messages) == 8  # 1 instruction + 3 x (query, answer) + 1 query
    roles = [m["role"] for m in build.messages]
    assert roles == ["system", "user", "assistant", "user", "assistant", "user", "assistant", "user"]


def test_truncation_budget_arithmetic():
    profile = default_registry()["pythia-12b"]
    template = load_template("zero-shot")
    body = "x" * 100_000
    build = build_messages(_doc(body), template, profile)
    # oracle: compute the advertised budget formula independently
    overhead = estimate_tokens(template.instruction) + 2 * MESSAGE_OVERHEAD_TOKENS
    budget_chars = (profile.context_length - ANSWER_RESERVE_TOKENS - overhead) * CHARS_PER_TOKEN
    query = build.messages[-1]["content"]
    assert build.truncated
    assert len(query) == budget_chars
    assert query == body[:budget_chars]  # head-first truncation


def test_budget_exhausted():
    profile = ModelProfile("tiny", 64, None, "http://e", ModelKind.OPEN)
    with pytest.raises(BudgetExhausted):
        build_messages(_doc("body"), load_template("zero-shot"), profile)


# --- request digest -----------------------------------------------------------------


def test_digest_stable_and_byte_sensitive():
    messages = [{"role": "user", "content": "hello"}]
    a = request_digest("m", messages, Sampling())
    b = request_digest("m", [{"role": "user", "content": "hello"}], Sampling())
    assert a == b
    c = request_digest("m", [{"role": "user", "content": "hello!"}], Sampling())
    assert a != c
    d = request_digest("m", messages, Sampling(temperature=0.5))
    assert a != d


# --- json island extraction ------------------------------------------------------------


def test_island_in_prose():
    text = (
        'Sure! {"virus": "Nipah virus", "country": "India", "date": "2018-05-31",'
        ' "cases": "15"} hope this helps'
    )
    assert extract_json_island(text) == {
        "virus": "Nipah virus",
        "country": "India",
        "date": "2018-05-31",
        "cases": "15",
    }


def test_island_balance_rule():
    assert extract_json_island('{"a": {"b": 1}} trailing') == {"a": '{"b": 1}'}


def test_island_skips_garbage_braces():
    assert extract_json_island('{not json} then {"k": "v"}') == {"k": "v"}


def test_island_casefolds_keys_and_stringifies():
    assert extract_json_island('{"Virus": "x", "Cases": 15, "flag": true, "gone": null}') == {
        "virus": "x",
        "cases": "15",
        "flag": "true",
        "gone": "None",
    }


def test_no_island():
    with pytest.raises(NoIsland):
        extract_json_island("no braces at all")


@settings(max_examples=200)
@given(
    st.dictionaries(
        st.text(alphabet="abcdefghij_", min_size=1, max_size=8),
        st.text(max_size=20),
        max_size=6,
    ),
    st.text(alphabet=st.characters(blacklist_characters="{}", blacklist_categories=["Cs"]), max_size=30),
    st.text(alphabet=st.characters(blacklist_characters="{}", blacklist_categories=["Cs"]), max_size=30),
)
def test_island_roundtrip_property(mapping, prefix, suffix):
    text = prefix + json.dumps(mapping, ensure_ascii=False) + suffix
    assert extract_json_island(text) == mapping


# --- parse_fields ----------------------------------------------------------------------


def test_parse_fields_contract(gazetteer):
    record = parse_fields(
        {"virus": "None", "country": "India", "date": "2018-05-31", "cases": "15"},
        "d1",
        "x",
        gazetteer,
    )
    assert record.disease is None
    assert record.country.alpha3 == "IND"
    assert record.date == date(2018, 5, 31)
    assert record.count.value == 15
    assert record.field_warnings == ()


def test_parse_fields_synonym_resolution(gazetteer):
    record = parse_fields({"virus": "EVD"}, "d1", "x", gazetteer)
    assert record.disease.display_name == "Ebola virus disease"
    assert record.disease_raw == "EVD"


def test_parse_fields_empty_map():
    record = parse_fields({}, "d1", "x")
    assert (record.disease, record.country, record.date, record.count) == (None,) * 4


def test_parse_fields_warns_on_unparseable(gazetteer):
    record = parse_fields({"virus": "mystery illness", "date": "someday"}, "d1", "x", gazetteer)
    assert record.disease is None
    assert record.disease_raw == "mystery illness"
    assert set(record.field_warnings) == {"disease", "date"}


def test_parse_fields_accepts_count_alias_and_numbers(gazetteer):
    record = parse_fields({"disease": "Zika", "count": 7}, "d1", "x", gazetteer)
    assert record.disease.canonical_id == "zika-virus"
    assert record.count.value == 7


# --- transport: replay, record, retries --------------------------------------------------


def test_replay_hit_and_miss(tmp_path):
    transport = Transport(mode=TransportMode.REPLAY, cache_dir=tmp_path)
    profile = default_registry()["llama-2-70b-chat"]
    messages = [{"role": "user", "content": "q"}]
    transport.put(profile, messages, Sampling(), "cached answer")
    assert complete(transport, profile, messages) == "cached answer"
    with pytest.raises(CacheMiss):
        complete(transport, profile, [{"role": "user", "content": "other"}])


def test_replay_requires_cache_dir():
    with pytest.raises(ConfigError):
        Transport(mode=TransportMode.REPLAY, cache_dir=None)


def test_live_requires_credential(tmp_path, monkeypatch):
    monkeypatch.delenv("EPIX_API_KEY", raising=False)
    transport = Transport(mode=TransportMode.LIVE)
    profile = default_registry()["llama-2-70b-chat"]
    with pytest.raises(AuthError):
        complete(transport, profile, [{"role": "user", "content": "q"}])


class _StubHandler(http.server.BaseHTTPRequestHandler):
    responses = []
    requests_seen = 0

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.rfile.read(length)
        type(self).requests_seen += 1
        status, body = self.responses[min(type(self).requests_seen - 1, len(self.responses) - 1)]
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(json.dumps(body).encode())

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    class Handler(_StubHandler):
        responses = []
        requests_seen = 0

    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield Handler, f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def _ok_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def test_retries_two_503s_then_success(stub_server, monkeypatch):
    handler, endpoint = stub_server
    handler.responses = [(503, {}), (503, {}), (200, _ok_body("finally"))]
    monkeypatch.setenv("EPIX_API_KEY", "k")
    transport = Transport(mode=TransportMode.LIVE, max_attempts=3, backoff_base=0.0)
    profile = ModelProfile("m", 4096, None, endpoint, ModelKind.OPEN)
    assert complete(transport, profile, [{"role": "user", "content": "q"}]) == "finally"
    assert handler.requests_seen == 3


def test_retries_exhausted(stub_server, monkeypatch):
    handler, endpoint = stub_server
    handler.responses = [(503, {})]
    monkeypatch.setenv("EPIX_API_KEY", "k")
    transport = Transport(mode=TransportMode.LIVE, max_attempts=2, backoff_base=0.0)
    profile = ModelProfile("m", 4096, None, endpoint, ModelKind.OPEN)
    with pytest.raises(TransportError):
        complete(transport, profile, [{"role": "user", "content": "q"}])
    assert handler.requests_seen == 2


def test_auth_rejection_is_not_retried(stub_server, monkeypatch):
    handler, endpoint = stub_server
    handler.responses = [(401, {})]
    monkeypatch.setenv("EPIX_API_KEY", "bad")
    transport = Transport(mode=TransportMode.LIVE, max_attempts=3, backoff_base=0.0)
    profile = ModelProfile("m", 4096, None, endpoint, ModelKind.OPEN)
    with pytest.raises(AuthError):
        complete(transport, profile, [{"role": "user", "content": "q"}])
    assert handler.requests_seen == 1


def test_record_mode_writes_cache_then_replays(stub_server, monkeypatch, tmp_path):
    handler, endpoint = stub_server
    handler.responses = [(200, _ok_body("recorded"))]
    monkeypatch.setenv("EPIX_API_KEY", "k")
    transport = Transport(mode=TransportMode.RECORD, cache_dir=tmp_path, backoff_base=0.0)
    profile = ModelProfile("m", 4096, None, endpoint, ModelKind.OPEN)
    messages = [{"role": "user", "content": "q"}]
    assert complete(transport, profile, messages) == "recorded"
    entry = transport.read_cached(request_digest("m", messages, Sampling()))
    assert entry["request"]["model"] == "m"

    replay = Transport(mode=TransportMode.REPLAY, cache_dir=tmp_path)
    assert complete(replay, profile, messages) == "recorded"
    assert handler.requests_seen == 1


# --- end-to-end extraction over replay ------------------------------------------------


def _seeded_transport(tmp_path, doc, template, profile, text):
    transport = Transport(mode=TransportMode.REPLAY, cache_dir=tmp_path)
    build = build_messages(doc, template, profile)
    transport.put(profile, build.messages, Sampling(), text)
    return transport


def test_extract_with_llm_full_record(tmp_path, gazetteer):
    doc = _doc("Nipah virus in India.")
    template = load_template("zero-shot")
    profile = default_registry()["llama-2-70b-chat"]
    transport = _seeded_transport(
        tmp_path, doc, template, profile,
        'Answer: {"virus": "Nipah virus", "country": "India", "date": "31 May 2018", "cases": "15"}',
    )
    record = extract_with_llm(doc, profile, template, transport, gazetteer=gazetteer)
    assert record.extractor_id == "llama-2-70b-chat"
    assert record.disease.canonical_id == "nipah-virus"
    assert record.date == date(2018, 5, 31)  # normalized from "31 May 2018"
    assert record.count.value == 15
    assert not record.parse_failure


def test_extract_with_llm_gibberish_flags_parse_failure(tmp_path, gazetteer):
    doc = _doc("whatever")
    template = load_template("zero-shot")
    profile = default_registry()["zephyr-7b-alpha"]
    transport = _seeded_transport(tmp_path, doc, template, profile, "cannot comply, sorry")
    record = extract_with_llm(doc, profile, template, transport, gazetteer=gazetteer)
    assert record.parse_failure
    assert (record.disease, record.country, record.date, record.count) == (None,) * 4


def test_extract_documents_preserves_order_and_reports_failures(tmp_path, gazetteer):
    template = load_template("zero-shot")
    profile = default_registry()["mistral-7b-openorca"]
    docs = [_doc(f"body {i}", doc_id=f"d{i}") for i in range(3)]
    transport = Transport(mode=TransportMode.REPLAY, cache_dir=tmp_path)
    for doc in docs[:2]:
        build = build_messages(doc, template, profile)
        transport.put(profile, build.messages, Sampling(), '{"virus": "Zika"}')

    with pytest.raises(ExtractionFailed) as excinfo:
        extract_documents(docs, profile, template, transport, gazetteer=gazetteer, concurrency=2)
    assert excinfo.value.document_id == "d2"
    completed = {r.document_id for r in excinfo.value.partial_records}
    assert completed == {"d0", "d1"}

    build = build_messages(docs[2], template, profile)
    transport.put(profile, build.messages, Sampling(), '{"virus": "Zika"}')
    records = extract_documents(docs, profile, template, transport, gazetteer=gazetteer)
    assert [r.document_id for r in records] == ["d0", "d1", "d2"]
    assert all(r.disease.canonical_id == "zika-virus" for r in records)
