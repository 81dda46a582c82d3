"""Remote chat-completion client: request shape, retries, scorer modes."""

import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from b2t.errors import RemoteServiceError
from b2t.remote import (
    ENV_API_KEY,
    ENV_ENDPOINT,
    ENV_MODEL,
    RemoteLm,
    RemoteLmConfig,
    RemoteLmScorer,
    complete_chat,
)

URL = "https://llm.test/v1/chat"


def chat_response(text):
    return httpx.Response(
        200, json={"choices": [{"message": {"content": text}}]}
    )


def logprob_response(entries):
    return httpx.Response(
        200,
        json={
            "choices": [
                {
                    "message": {"content": "x"},
                    "logprobs": {
                        "content": [
                            {"top_logprobs": [{"token": t, "logprob": lp} for t, lp in entries]}
                        ]
                    },
                }
            ]
        },
    )


def make_client(handler, **config_overrides) -> RemoteLm:
    config = RemoteLmConfig(
        endpoint_url=URL, backoff_base_seconds=0.0, **config_overrides
    )
    return RemoteLm(config, transport=httpx.MockTransport(handler))


class TestConfig:
    def test_from_env(self, monkeypatch):
        monkeypatch.setenv(ENV_ENDPOINT, URL)
        monkeypatch.setenv(ENV_API_KEY, "secret")
        monkeypatch.setenv(ENV_MODEL, "small-lm")
        config = RemoteLmConfig.from_env()
        assert config.endpoint_url == URL
        assert config.api_key == "secret"
        assert config.model_name == "small-lm"

    def test_overrides_beat_env(self, monkeypatch):
        monkeypatch.setenv(ENV_ENDPOINT, URL)
        monkeypatch.setenv(ENV_MODEL, "env-model")
        config = RemoteLmConfig.from_env(model_name="flag-model")
        assert config.model_name == "flag-model"

    def test_missing_endpoint_rejected(self, monkeypatch):
        monkeypatch.delenv(ENV_ENDPOINT, raising=False)
        with pytest.raises(ValueError):
            RemoteLmConfig.from_env()

    def test_validation(self):
        with pytest.raises(ValueError):
            RemoteLmConfig(endpoint_url=URL, max_concurrent_requests=0)
        with pytest.raises(ValueError):
            RemoteLmConfig(endpoint_url=URL, retry_limit=-1)
        with pytest.raises(ValueError):
            RemoteLmConfig(endpoint_url=URL, timeout_seconds=0)


class TestCompleteChat:
    def test_success_and_request_shape(self):
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            seen["auth"] = request.headers.get("Authorization")
            return chat_response("hello back")

        with make_client(handler, api_key="key123", model_name="m1") as client:
            out = client.complete_chat("hello there", thinking_budget=256)
        assert out == "hello back"
        assert seen["auth"] == "Bearer key123"
        assert seen["body"]["model"] == "m1"
        assert seen["body"]["messages"] == [{"role": "user", "content": "hello there"}]
        assert seen["body"]["max_tokens"] == 1024
        assert seen["body"]["thinking_budget"] == 256

    def test_no_auth_header_without_key(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("Authorization")
            return chat_response("ok")

        with make_client(handler) as client:
            client.complete_chat("p")
        assert seen["auth"] is None

    def test_block_list_content(self):
        def handler(request):
            return httpx.Response(
                200,
                json={
                    "choices": [
                        {
                            "message": {
                                "content": [
                                    {"type": "thinking", "thinking": "..."},
                                    {"type": "text", "text": "the answer"},
                                ]
                            }
                        }
                    ]
                },
            )

        with make_client(handler) as client:
            assert client.complete_chat("p") == "the answer"

    def test_missing_choices_raises(self):
        with make_client(lambda request: httpx.Response(200, json={})) as client:
            with pytest.raises(RemoteServiceError):
                client.complete_chat("p")

    def test_non_json_body_raises(self):
        with make_client(lambda request: httpx.Response(200, text="<html>")) as client:
            with pytest.raises(RemoteServiceError) as err:
                client.complete_chat("p")
        assert err.value.status_code == 200

    def test_module_level_convenience(self):
        config = RemoteLmConfig(endpoint_url=URL, backoff_base_seconds=0.0)
        out = complete_chat(
            config, "p", transport=httpx.MockTransport(lambda request: chat_response("yo"))
        )
        assert out == "yo"


class TestRetries:
    @pytest.mark.parametrize("status", [429, 500, 502, 503, 504])
    def test_retryable_status_then_success(self, status):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                return httpx.Response(status, text="slow down")
            return chat_response("recovered")

        with make_client(handler, retry_limit=2) as client:
            assert client.complete_chat("p") == "recovered"
        assert len(calls) == 2

    def test_transport_error_then_success(self):
        calls = []

        def handler(request):
            calls.append(1)
            if len(calls) == 1:
                raise httpx.ConnectError("refused", request=request)
            return chat_response("up again")

        with make_client(handler, retry_limit=1) as client:
            assert client.complete_chat("p") == "up again"
        assert len(calls) == 2

    def test_exhausted_retries_raise_with_attempts(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(503, text="down")

        with make_client(handler, retry_limit=2) as client:
            with pytest.raises(RemoteServiceError) as err:
                client.complete_chat("p")
        assert len(calls) == 3
        assert err.value.attempts == 3
        assert err.value.status_code == 503

    def test_non_retryable_status_fails_immediately(self):
        calls = []

        def handler(request):
            calls.append(1)
            return httpx.Response(400, text="bad request")

        with make_client(handler, retry_limit=5) as client:
            with pytest.raises(RemoteServiceError) as err:
                client.complete_chat("p")
        assert len(calls) == 1
        assert err.value.status_code == 400

    def test_backoff_schedule_doubles(self, monkeypatch):
        naps = []
        monkeypatch.setattr(time, "sleep", lambda s: naps.append(s))

        def handler(request):
            return httpx.Response(429, text="later")

        config = RemoteLmConfig(endpoint_url=URL, retry_limit=2, backoff_base_seconds=0.5)
        with RemoteLm(config, transport=httpx.MockTransport(handler)) as client:
            with pytest.raises(RemoteServiceError):
                client.complete_chat("p")
        assert naps == [0.5, 1.0]


class TestConcurrencyCap:
    def test_in_flight_requests_bounded(self):
        lock = threading.Lock()
        state = {"now": 0, "peak": 0}

        def handler(request):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            time.sleep(0.02)
            with lock:
                state["now"] -= 1
            return chat_response("ok")

        with make_client(handler, max_concurrent_requests=2) as client:
            with ThreadPoolExecutor(max_workers=8) as pool:
                list(pool.map(lambda _: client.complete_chat("p"), range(8)))
        assert state["peak"] <= 2


class TestTokenCandidates:
    def test_parses_top_logprobs(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["top_logprobs"] == 4
            assert body["max_tokens"] == 1
            return logprob_response([(" the", -0.1), (" a", -1.5)])

        with make_client(handler) as client:
            out = client.token_candidates("context text", top_logprobs=4)
        assert out == [(" the", -0.1), (" a", -1.5)]

    def test_missing_logprobs_raises(self):
        with make_client(lambda request: chat_response("no logprobs")) as client:
            with pytest.raises(RemoteServiceError):
                client.token_candidates("x", top_logprobs=4)


class TestScorerShortcut:
    def make_scorer(self, entries):
        client = make_client(lambda request: logprob_response(entries))
        return RemoteLmScorer(client)

    def test_case_variants_merge(self):
        # " The" and "the" normalize to the same word: probabilities add
        scorer = self.make_scorer(
            [(" The", math.log(0.5)), ("the", math.log(0.3)), (" cat", math.log(0.2))]
        )
        assert scorer.score_continuation(["saw"], "the") == pytest.approx(math.log(0.8))
        assert scorer.score_continuation(["saw"], "cat") == pytest.approx(math.log(0.2))

    def test_unknown_word_gets_floor(self):
        scorer = self.make_scorer([(" the", math.log(0.9))])
        assert scorer.score_continuation(["saw"], "zebra") == pytest.approx(math.log(1e-8))

    def test_punctuation_tokens_dropped(self):
        scorer = self.make_scorer([(".", -0.1), (" dog", math.log(0.4))])
        ranked = scorer.next_word_distribution(["the"], top_k=5)
        assert ranked == [("dog", pytest.approx(0.4))]

    def test_ranking_descending_then_alphabetical(self):
        scorer = self.make_scorer(
            [(" b", math.log(0.4)), (" a", math.log(0.4)), (" c", math.log(0.2))]
        )
        ranked = scorer.next_word_distribution([], top_k=3)
        assert [w for w, _ in ranked] == ["a", "b", "c"]

    def test_top_k_validation(self):
        scorer = self.make_scorer([(" a", -0.5)])
        with pytest.raises(ValueError):
            scorer.next_word_distribution([], top_k=0)

    def test_score_never_positive(self):
        # merged probabilities can slightly exceed 1; the log is clamped
        scorer = self.make_scorer([(" the", 0.0), ("The", 0.0)])
        assert scorer.score_continuation([], "the") == 0.0


class TestScorerTokenBeam:
    def test_multi_token_words_are_grown(self):
        def handler(request):
            prompt = json.loads(request.content)["messages"][0]["content"]
            if prompt == "the":
                return logprob_response([(" hel", -1.0), (" cat", -0.5)])
            if prompt == "the hel":
                return logprob_response([("lo", -0.3)])
            if prompt == "the cat":
                return logprob_response([(" next", -0.1)])
            raise AssertionError(f"unexpected prompt {prompt!r}")

        client = make_client(handler)
        scorer = RemoteLmScorer(client, use_token_beam=True, token_beam_width=2, max_token_depth=2)
        ranked = scorer.next_word_distribution(["the"], top_k=2)
        assert [w for w, _ in ranked] == ["cat", "hello"]
        assert ranked[0][1] == pytest.approx(math.exp(-0.5))
        assert ranked[1][1] == pytest.approx(math.exp(-1.3))

    def test_space_leading_continuation_closes_word(self):
        calls = []

        def handler(request):
            prompt = json.loads(request.content)["messages"][0]["content"]
            calls.append(prompt)
            if prompt == "a":
                return logprob_response([(" done", -0.2)])
            return logprob_response([(" another", -0.1)])

        client = make_client(handler)
        scorer = RemoteLmScorer(client, use_token_beam=True, token_beam_width=1, max_token_depth=4)
        ranked = scorer.next_word_distribution(["a"], top_k=1)
        assert ranked == [("done", pytest.approx(math.exp(-0.2)))]
        # the word closed on its first continuation; depth was not exhausted
        assert calls == ["a", "a done"]

    def test_beam_parameter_validation(self):
        client = make_client(lambda request: chat_response("x"))
        with pytest.raises(ValueError):
            RemoteLmScorer(client, token_beam_width=0)
        with pytest.raises(ValueError):
            RemoteLmScorer(client, max_token_depth=0)
        client.close()
