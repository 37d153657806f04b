import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from eimf.apcluster import ClusterResult
from eimf.esim import (
    LLM_CALLS,
    ChatClient,
    LLMError,
    MockLLM,
    SemanticTower,
    build_prompt,
    encode_interests,
    extract_interest_object,
    frequency_fallback,
    infer_exemplar_interests,
    infer_interests,
    masked_softmax,
    parse_interests,
    prompt_item_names,
    propagate_to_users,
    read_interests,
    semantic_self_attention,
    semantic_target_attention,
    write_interests,
)
from eimf.textenc import HashingEncoder

GOLDEN = Path(__file__).parent / "golden"


def test_prompt_single_item():
    assert build_prompt(["Lip Balm"], [7]) == (
        "The user's historical click sequence is as follows: [Lip Balm (7)]; please infer the user's "
        "interest preference and output it in the format of JSON, such as {interest sequence number: interest content;}"
    )


def test_prompt_golden_three_items():
    got = build_prompt(["Matte Lipstick", "Rose Toner", "Lip Balm"], [12, 40, 7])
    assert got.encode("utf-8") == (GOLDEN / "prompt_3items.txt").read_bytes()


def test_prompt_errors():
    with pytest.raises(ValueError):
        build_prompt([], [])
    with pytest.raises(ValueError):
        build_prompt(["a", "b"], [1])


def test_prompt_names_round_trip():
    names = ["Tea (green)", "Pot, large", "Cup"]
    assert prompt_item_names(build_prompt(names, ["a1", "b2", "c3"])) == names


class Scripted:
    def __init__(self, *replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, prompt):
        self.calls += 1
        return self.replies.pop(0)


def test_parse_simple_object():
    c = Scripted('{"1": " lip care ", "2": "eye makeup"}')
    assert infer_interests(c, "p") == ["lip care", "eye makeup"]


def test_numeric_key_order_and_cap():
    obj = {str(k): f"i{k}" for k in range(25, 0, -1)}
    assert parse_interests(obj, 20) == [f"i{k}" for k in range(1, 21)]


def test_first_object_in_chatty_reply():
    text = 'Sure! Here you go:\n```json\n{"2": "b", "1": "a"}\n``` and also {"1": "ignored"}'
    assert parse_interests(extract_interest_object(text)) == ["a", "b"]


def test_loose_template_shape():
    assert parse_interests(extract_interest_object("{1: skin care; 2: hair tools;}")) == ["skin care", "hair tools"]


def test_fallback_after_retries():
    prompt = build_prompt(["Green Tea", "Green Tea Pot", "Black Tea"], [1, 2, 3])
    c = Scripted("not json at all", "not json at all")
    out = infer_interests(c, prompt)
    assert c.calls == 2
    assert out == ["tea", "green", "pot", "black"]
    assert out == frequency_fallback(prompt)


def test_transport_error_propagates():
    class Broken:
        def complete(self, prompt):
            raise LLMError("down")

    with pytest.raises(LLMError):
        infer_interests(Broken(), "p")


@given(st.lists(st.text(alphabet="abcdefg hij", min_size=1, max_size=20).filter(str.strip), min_size=1, max_size=12))
def test_mock_is_pure_function_of_prompt(names):
    prompt = build_prompt(names, list(range(len(names))))
    a = infer_interests(MockLLM(), prompt)
    b = infer_interests(MockLLM(), prompt)
    assert a == b and len(a) <= 20


def test_mock_returns_topic_tokens():
    names = ["Golden Espresso 1", "Rapid Espresso 2", "Mini Teapot 3", "Pure Espresso 4", "Bold Teapot 5", "Eco Teapot 6"]
    out = infer_interests(MockLLM(), build_prompt(names, range(6)))
    assert out[:2] == ["espresso", "teapot"]


class _Endpoint(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Endpoint.seen.append((body, self.headers.get("Authorization")))
        reply = json.dumps({"choices": [{"message": {"role": "assistant", "content": '{"1": "tea"}'}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, *args):
        pass


def test_chat_client_wire_protocol(monkeypatch):
    monkeypatch.setenv("EIMF_LLM_API_KEY", "k-123")
    server = HTTPServer(("127.0.0.1", 0), _Endpoint)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        client = ChatClient(f"http://127.0.0.1:{server.server_port}/v1/chat/completions", "qwen-turbo")
        before = LLM_CALLS.value
        assert infer_interests(client, "hello") == ["tea"]
        assert LLM_CALLS.value == before + 1
        body, auth = _Endpoint.seen[-1]
        assert body == {"model": "qwen-turbo", "messages": [{"role": "user", "content": "hello"}]}
        assert auth == "Bearer k-123"
    finally:
        server.shutdown()
    with pytest.raises(LLMError):
        ChatClient(f"http://127.0.0.1:{server.server_port}/", "m", timeout=0.5).complete("x")


def test_exemplar_inference_and_io(tmp_path):
    prompts = {4: build_prompt(["Red Candle", "Blue Candle"], [1, 2]), 1: build_prompt(["Soft Shampoo"], [3])}
    texts = infer_exemplar_interests(MockLLM(), prompts, max_in_flight=2)
    assert list(texts) == [1, 4]
    assert texts[4][0] == "candle"
    path = tmp_path / "interests.json"
    write_interests(path, texts)
    assert [json.loads(line)["exemplar"] for line in path.read_text().splitlines()] == [1, 4]
    assert read_interests(path) == texts


def test_encode_interests():
    enc = HashingEncoder(16)
    empty = encode_interests(enc, [], 5)
    assert not empty.vectors.any() and not empty.mask.any()
    s = encode_interests(enc, ["a", "b c", "d"], 20)
    assert s.mask.sum() == 3 and s.vectors.shape == (20, 16)
    assert np.array_equal(s.vectors[1], enc.encode_text("b c"))
    assert not s.vectors[3:].any()
    with pytest.raises(ValueError):
        encode_interests(enc, ["x"] * 3, 2)


def test_propagation():
    enc = HashingEncoder(8)
    table = {1: encode_interests(enc, ["x"], 3), 4: encode_interests(enc, ["y"], 3)}
    cluster = ClusterResult((1, 4), (1, 1, 4, 1, 4), True, 3)
    users = propagate_to_users(cluster, table)
    assert users[2] is table[4] and users[1] is table[1]
    assert users[0].content_equal(users[3])
    with pytest.raises(KeyError):
        propagate_to_users(cluster, {1: table[1]})


def test_masked_softmax_zeroes_masked_positions():
    logits = torch.tensor([[1.0, 50.0, 2.0], [0.0, 0.0, 0.0]])
    mask = torch.tensor([[True, False, True], [False, False, False]])
    w = masked_softmax(logits, mask)
    assert w[0, 1].item() == 0.0 and abs(w[0].sum().item() - 1) < 1e-6
    assert not w[1].any()


def _eye_params(d):
    eye, zero = torch.eye(d, dtype=torch.float64), torch.zeros(d, dtype=torch.float64)
    return dict(wq=eye, bq=zero, wk=eye, bk=zero, wv=eye, bv=zero)


def test_self_attention_examples():
    d = 2
    own = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    assert round(own, 4) == 0.6698
    h = torch.eye(2, dtype=torch.float64)
    out, w = semantic_self_attention(h, torch.tensor([True, True]), **_eye_params(d), return_weights=True)
    assert torch.allclose(w, torch.tensor([[own, 1 - own], [1 - own, own]], dtype=torch.float64))

    same = torch.tensor([[0.3, -1.0], [0.3, -1.0]], dtype=torch.float64)
    assert torch.allclose(semantic_self_attention(same, torch.tensor([True, True]), **_eye_params(d)), same)

    g = torch.Generator().manual_seed(0)
    wv, bv = torch.randn(3, 3, generator=g, dtype=torch.float64), torch.randn(3, generator=g, dtype=torch.float64)
    x = torch.randn(4, 3, generator=g, dtype=torch.float64)
    mask = torch.tensor([False, False, True, False])
    params = {**_eye_params(3), "wv": wv, "bv": bv}
    out = semantic_self_attention(x, mask, **params)
    assert torch.allclose(out[2], wv @ x[2] + bv)
    assert not out[[0, 1, 3]].any()
    assert not semantic_self_attention(x, torch.zeros(4, dtype=torch.bool), **params).any()


def test_target_attention_examples():
    own = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1)
    h = torch.eye(2, dtype=torch.float64)
    out = semantic_target_attention(torch.tensor([1.0, 0.0], dtype=torch.float64), h, torch.tensor([True, True]))
    assert torch.allclose(out, torch.tensor([own, 1 - own], dtype=torch.float64))

    rows = torch.tensor([[0.0, 1.0, 2.0], [0.0, 3.0, -2.0], [0.0, 9.0, 9.0]])
    t = torch.tensor([1.0, 0.0, 0.0])
    mask = torch.tensor([True, True, False])
    assert torch.allclose(semantic_target_attention(t, rows, mask), rows[:2].mean(0))
    assert torch.equal(semantic_target_attention(t, rows[:1], mask[:1]), rows[0])
    assert not semantic_target_attention(t, rows, torch.zeros(3, dtype=torch.bool)).any()


def test_tower_packed_path_matches_dense():
    torch.manual_seed(0)
    tower = SemanticTower(5, 3).double()
    with torch.no_grad():
        for p in tower.parameters():
            p.normal_()
    h = torch.randn(4, 3, 5, dtype=torch.float64)
    mask = torch.tensor([[True, True, False], [False, False, False], [True, False, False], [True, True, True]])
    h = h * mask.unsqueeze(-1)
    dense = semantic_self_attention(h, mask, tower.wq, tower.bq, tower.wk, tower.bk, tower.wv, tower.bv)
    assert torch.allclose(tower.self_attention(h, mask), dense, atol=1e-12)
