"""Tests for consensusnav.oracles."""

import logging
from unittest.mock import MagicMock, patch

import numpy as np
import pytest
import requests

from consensusnav import config
from consensusnav.errors import ConfigError, MalformedResponse, OracleUnavailable
from consensusnav.exploration import CandidateTarget
from consensusnav.mapping import ObjectCentricMap, integrate
from consensusnav.oracles import (
    CandidatePack,
    PackedCandidate,
    RemoteOracle,
    RemoteOracleConfig,
    SyntheticOracle,
    SyntheticOracleConfig,
    build_pack,
    channel_noise,
    estimate_distribution,
    is_transient,
    load_prompt,
    parse_discriminative,
    parse_generative,
    remote_prompt,
    render_candidate,
    synthetic_discriminative,
    synthetic_generative,
)
from consensusnav.world import AgentPose, Detection, Goal, Observation, Query, token_embedding

VOCAB = (("chair", "table"), ("red",))
QUERY = Query("the red chair", Goal("chair", ("red",)))


def make_pack(truth, query=QUERY):
    chair = token_embedding("chair")
    candidates = tuple(
        PackedCandidate(i, 10 + i, chair, chair, (("table", 100.0, 1.2),) if i == 0 else (), 0.9)
        for i in range(len(truth))
    )
    return CandidatePack(query, candidates, VOCAB, tuple(truth))


def chat_reply(content):
    resp = MagicMock()
    resp.json.return_value = {"choices": [{"message": {"content": content}}]}
    return resp


def remote(session, **kwargs):
    kwargs.setdefault("backoff", 0.0)
    return RemoteOracle(RemoteOracleConfig(**kwargs), session=session)


@pytest.fixture
def session():
    s = MagicMock()
    s.headers = {}
    return s


class TestCandidatePack:
    def test_indices_contiguous(self):
        chair = token_embedding("chair")
        with pytest.raises(ValueError):
            CandidatePack(QUERY, (PackedCandidate(1, 0, chair, chair),))

    def test_no_match_index(self):
        assert make_pack([1.0, 0.0]).no_match_index == 2

    def test_digest_stable(self):
        assert make_pack([1.0, 0.0]).digest() == make_pack([0.2, 0.3]).digest()
        other = Query("the blue chair", Goal("chair", ("blue",)))
        assert make_pack([1.0, 0.0]).digest() != make_pack([1.0, 0.0], other).digest()

    def test_build_pack(self):
        objmap = ObjectCentricMap("q", token_embedding("chair"))
        for oid, token, cell in ((1, "chair", (0, 0)), (2, "table", (4, 0))):
            det = Detection(oid, token_embedding(token), frozenset({cell}), 1.0)
            integrate(objmap, Observation(AgentPose(0.0, 0.0, 0), det.visible_footprint, frozenset(), (det,)))
        assert len(objmap) == 2
        pack = build_pack(QUERY, [CandidateTarget(1, 0.7), CandidateTarget(0, 1.0)], objmap, VOCAB)
        assert [c.map_id for c in pack.candidates] == [0, 1]
        assert [c.index for c in pack.candidates] == [0, 1]
        assert pack.candidates[0].context == (("table", 0.0, 1.0),)
        assert pack.candidates[0].similarity == pytest.approx(1.0)


class TestSyntheticOracle:
    def test_generative_shape_and_mode(self):
        w = synthetic_generative(make_pack([1.0, 0.0]))
        assert w.shape == (3,)
        assert w.sum() == pytest.approx(1.0)
        assert int(np.argmax(w)) == 0

    def test_no_match_wins_without_match(self):
        w = synthetic_generative(make_pack([0.0, 0.2]))
        assert int(np.argmax(w)) == 2

    def test_zero_temperature_is_one_hot(self):
        cfg = SyntheticOracleConfig(temperature=0)
        assert synthetic_generative(make_pack([0.3, 1.0]), cfg=cfg).tolist() == [0.0, 1.0, 0.0]
        assert synthetic_discriminative(make_pack([1.0, 0.5]), cfg=cfg).tolist() == [1.0, 0.0, 0.0]

    def test_discriminative_values(self):
        w = synthetic_discriminative(make_pack([1.0, 0.5]))
        yes, no = 1 / (1 + np.exp(-1.0)), 1 / (1 + np.exp(1.0))
        assert w[:2] == pytest.approx([yes, no])
        assert w[2] == pytest.approx((1 - yes) * (1 - no))

    def test_seeded_noise_reproducible(self):
        cfg = SyntheticOracleConfig(seed=3, gen_noise=0.5, disc_noise=0.5)
        pack = make_pack([1.0, 0.0, 0.5])
        a, b = SyntheticOracle(cfg), SyntheticOracle(SyntheticOracleConfig(seed=3, gen_noise=0.5, disc_noise=0.5))
        assert np.array_equal(a.generative(pack), b.generative(pack))
        assert np.array_equal(a.discriminative(pack), b.discriminative(pack))
        c = SyntheticOracle(SyntheticOracleConfig(seed=4, gen_noise=0.5, disc_noise=0.5))
        assert not np.array_equal(a.generative(pack), c.generative(pack))

    def test_biases_hit_distinct_wrong_options(self):
        cfg = SyntheticOracleConfig(gen_bias=10.0, disc_bias=10.0)
        pack = make_pack([1.0, 0.0, 0.0])
        gen = synthetic_generative(pack, cfg=cfg)
        acc = synthetic_discriminative(pack, cfg=cfg)[:3]
        gen_choice = int(np.argmax(gen))
        disc_choice = int(np.argmax(acc))
        assert gen_choice != 0 and disc_choice != 0
        assert gen_choice != disc_choice

    def test_channel_noise_decorrelated(self):
        cfg = SyntheticOracleConfig(seed=9)
        chair = token_embedding("chair")
        gen, disc = [], []
        for k in range(10_000):
            pack = CandidatePack(QUERY, (PackedCandidate(0, k, chair, chair),))
            gen.append(channel_noise(cfg, pack, "generative")[0])
            disc.append(channel_noise(cfg, pack, "discriminative")[0])
        assert abs(np.corrcoef(gen, disc)[0, 1]) < 0.1
        assert np.std(gen) == pytest.approx(1.0, abs=0.05)
        assert np.std(disc) == pytest.approx(1.0, abs=0.05)

    def test_truth_length_checked(self):
        with pytest.raises(ValueError):
            synthetic_generative(make_pack([1.0, 0.0]), truth=[1.0])

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SyntheticOracleConfig(gen_noise=-1)
        with pytest.raises(ConfigError):
            SyntheticOracleConfig(temperature=-0.5)


class TestEstimateDistribution:
    def test_deterministic_answers(self):
        oracle = SyntheticOracle(SyntheticOracleConfig(temperature=0))
        pack = make_pack([0.0, 1.0])
        assert estimate_distribution(oracle, pack, 5).tolist() == [0.0, 5.0, 0.0]
        rates = estimate_distribution(oracle, pack, 5, channel="discriminative")
        assert rates.tolist() == [0.0, 1.0, 0.0]

    def test_samples_in_range(self):
        oracle = SyntheticOracle()
        counts = estimate_distribution(oracle, make_pack([1.0, 0.0]), 20, np.random.default_rng(1))
        assert counts.sum() == 20
        assert counts.shape == (3,)

    def test_bad_arguments(self):
        oracle = SyntheticOracle()
        with pytest.raises(ValueError):
            estimate_distribution(oracle, make_pack([1.0, 0.0]), 0)
        with pytest.raises(ValueError):
            estimate_distribution(oracle, make_pack([1.0, 0.0]), 3, channel="ranking")


class TestParsing:
    @pytest.mark.parametrize("text,expected", [
        ("candidate: 2", 2),
        ("Candidate 0", 0),
        ("  candidate=1\n", 1),
        ("candidate: none", 3),
        ("CANDIDATE: None", 3),
    ])
    def test_generative(self, text, expected):
        assert parse_generative(text, 3) == expected

    @pytest.mark.parametrize("text", ["candidate: 3", "the second one", "", "candidate: 1, maybe 2"])
    def test_generative_malformed(self, text):
        with pytest.raises(MalformedResponse) as exc_info:
            parse_generative(text, 3)
        assert exc_info.value.mode == "generative"

    def test_discriminative(self):
        assert parse_discriminative("Yes.") is True
        assert parse_discriminative(" no ") is False
        with pytest.raises(MalformedResponse):
            parse_discriminative("maybe")


class TestPrompts:
    def test_templates_present(self):
        assert "{candidates}" in load_prompt("generative")
        assert "{query}" in load_prompt("discriminative")

    def test_unknown_version(self):
        with pytest.raises(ConfigError):
            load_prompt("generative", "v999")

    def test_generative_prompt(self):
        body = remote_prompt(make_pack([1.0, 0.0]), "generative")
        content = body["messages"][0]["content"]
        assert body["model"] == config.REMOTE_MODEL
        assert '"the red chair"' in content
        assert "Candidate 0:" in content and "Candidate 1:" in content
        assert "from 0 to 1" in content

    def test_discriminative_prompt(self):
        content = remote_prompt(make_pack([1.0, 0.0]), "discriminative", index=1)["messages"][0]["content"]
        assert content.count("Candidate ") == 1
        assert "nothing within reach" in content

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            remote_prompt(make_pack([1.0]), "ranking")

    def test_render_surroundings(self):
        text = render_candidate(make_pack([1.0]).candidates[0], VOCAB, 4)
        assert text.startswith("Candidate 4:")
        assert "chair" in text
        assert "table 1.2 m in front" in text


class TestRemoteOracle:
    def test_generative_answer(self, session, monkeypatch):
        monkeypatch.setenv(config.API_KEY_ENV, "secret")
        session.post.return_value = chat_reply("candidate: 1")
        oracle = remote(session)
        assert session.headers["Authorization"] == "Bearer secret"
        assert oracle.sample_generative(make_pack([0.0, 1.0])) == 1
        url = session.post.call_args[0][0]
        assert url.endswith("/chat/completions")
        assert session.post.call_args[1]["json"]["messages"][0]["role"] == "user"

    def test_weights_from_samples(self, session):
        session.post.return_value = chat_reply("candidate: none")
        oracle = remote(session, n=3)
        assert oracle.generative(make_pack([0.0, 1.0])).tolist() == [0.0, 0.0, 3.0]
        assert session.post.call_count == 3

    def test_discriminative_answer(self, session):
        session.post.return_value = chat_reply("yes")
        oracle = remote(session, n=2)
        assert oracle.discriminative(make_pack([0.0, 1.0])).tolist() == [1.0, 1.0, 0.0]

    def test_malformed_abstains(self, session, caplog):
        session.post.return_value = chat_reply("I think it is the chair")
        oracle = remote(session, n=2)
        with caplog.at_level(logging.WARNING):
            assert oracle.sample_generative(make_pack([1.0, 0.0])) is None
        assert "Abstention" in caplog.text
        assert oracle.generative(make_pack([1.0, 0.0])).tolist() == [0.0, 0.0, 0.0]
        assert oracle.discriminative(make_pack([1.0, 0.0])).tolist() == [0.5, 0.5, 0.25]

    def test_missing_content_abstains(self, session):
        resp = MagicMock()
        resp.json.return_value = {"choices": []}
        session.post.return_value = resp
        assert remote(session).sample_discriminative(make_pack([1.0]), 0) is None

    @patch("consensusnav.errors.time.sleep")
    def test_transport_failure(self, mock_sleep, session):
        session.post.side_effect = requests.ConnectionError("down")
        oracle = remote(session, max_retries=2)
        with pytest.raises(OracleUnavailable):
            oracle.sample_generative(make_pack([1.0]))
        assert session.post.call_count == 3
        assert mock_sleep.call_count == 2

    @patch("consensusnav.errors.time.sleep")
    def test_http_error_retried(self, mock_sleep, session):
        bad = MagicMock()
        bad.raise_for_status.side_effect = requests.HTTPError("503")
        session.post.side_effect = [bad, chat_reply("no")]
        assert remote(session).sample_discriminative(make_pack([1.0]), 0) is False
        assert mock_sleep.call_count == 1

    @patch("consensusnav.errors.time.sleep")
    def test_client_error_not_retried(self, mock_sleep, session):
        bad = MagicMock()
        bad.raise_for_status.side_effect = requests.HTTPError("401", response=MagicMock(status_code=401))
        session.post.return_value = bad
        with pytest.raises(OracleUnavailable):
            remote(session).sample_generative(make_pack([1.0]))
        assert session.post.call_count == 1
        mock_sleep.assert_not_called()

    def test_is_transient(self):
        assert is_transient(requests.ConnectionError("down"))
        assert is_transient(requests.HTTPError(response=MagicMock(status_code=503)))
        assert is_transient(requests.HTTPError(response=MagicMock(status_code=429)))
        assert not is_transient(requests.HTTPError(response=MagicMock(status_code=404)))

    def test_missing_key_warns(self, session, monkeypatch, caplog):
        monkeypatch.delenv(config.API_KEY_ENV, raising=False)
        with caplog.at_level(logging.WARNING):
            remote(session)
        assert config.API_KEY_ENV in caplog.text
        assert "Authorization" not in session.headers

    def test_not_deterministic(self, session):
        assert remote(session).deterministic is False
        assert SyntheticOracle().deterministic is True

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RemoteOracleConfig(n=0)
        with pytest.raises(ConfigError):
            RemoteOracleConfig(max_in_flight=0)
