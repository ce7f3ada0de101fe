"""Semantic oracles: a seeded synthetic oracle and a remote chat-completion client.

Both answer two kinds of question about a :class:`CandidatePack`:

* generative - which candidate (or none) matches the query;
* discriminative - does this one candidate match the query (yes / no).
"""

import logging
import math
import os
import re
import threading
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
import requests
from requests.adapters import HTTPAdapter

from . import config
from .equilibrium import append_no_match
from .errors import ConfigError, MalformedResponse, OracleUnavailable, retry
from .mapping import ObjectCentricMap, describe_embedding
from .utils import stable_seed
from .world import GridScene, Query, match_score

log = logging.getLogger(__name__)

MODES = ("generative", "discriminative")


# ── Candidate packs ───────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PackedCandidate:
    index: int
    map_id: int
    first_person: np.ndarray       # closest single-view descriptor
    top_down: np.ndarray           # merged map embedding
    context: tuple = ()            # ((category, bearing_deg, distance_m), ...)
    similarity: float = 0.0        # best query similarity seen for the map object


@dataclass(frozen=True, eq=False)
class CandidatePack:
    query: Query
    candidates: tuple[PackedCandidate, ...]
    vocabulary: tuple = ((), ())
    truth: tuple = ()              # hidden per-candidate truth scores, synthetic oracle only

    def __post_init__(self):
        for i, cand in enumerate(self.candidates):
            if cand.index != i:
                raise ValueError("candidate indices must be contiguous from 0")

    def __len__(self):
        return len(self.candidates)

    @property
    def no_match_index(self) -> int:
        return len(self.candidates)

    def digest(self) -> int:
        parts = [self.query.key]
        for cand in self.candidates:
            parts.append(cand.map_id)
            parts.extend(f"{v:.9f}" for v in cand.first_person)
        return stable_seed(*parts)


def _object_centroid(obj, cell_size: float) -> tuple[float, float]:
    xs = [(x + 0.5) * cell_size for x, _ in obj.footprint]
    ys = [(y + 0.5) * cell_size for _, y in obj.footprint]
    return float(np.mean(xs)), float(np.mean(ys))


def build_pack(query: Query, candidates, objmap: ObjectCentricMap, vocabulary,
               cell_size: float = config.CELL_SIZE,
               context_m: float = config.DIRECTIONAL_RANGE_M) -> CandidatePack:
    """Package candidate targets with contiguous indices and their surroundings."""
    packed = []
    for i, cand in enumerate(sorted(candidates, key=lambda c: c.map_id)):
        obj = objmap.get(cand.map_id)
        cx, cy = _object_centroid(obj, cell_size)
        context = []
        for other in sorted(objmap.objects, key=lambda o: o.map_id):
            if other.map_id == obj.map_id:
                continue
            ox, oy = _object_centroid(other, cell_size)
            dist = math.hypot(ox - cx, oy - cy)
            if dist > context_m:
                continue
            category, _ = describe_embedding(other.embedding, vocabulary)
            bearing = math.degrees(math.atan2(oy - cy, ox - cx)) % 360.0
            context.append((category, round(bearing, 1), round(dist, 2)))
        packed.append(PackedCandidate(i, obj.map_id, obj.best_view.copy(), obj.embedding.copy(),
                                      tuple(context), obj.best_similarity))
    return CandidatePack(query, tuple(packed), vocabulary)


def truth_scores(pack: CandidatePack, objmap: ObjectCentricMap, scene: GridScene) -> tuple:
    """Ground-truth match score of each candidate's dominant source object."""
    scores = []
    for cand in pack.candidates:
        source = scene.object_by_id(objmap.get(cand.map_id).dominant_source)
        scores.append(match_score(scene, source, pack.query))
    return tuple(scores)


def with_truth(pack: CandidatePack, truth) -> CandidatePack:
    return CandidatePack(pack.query, pack.candidates, pack.vocabulary, tuple(truth))


# ── Oracle protocol ───────────────────────────────────────────────

class Oracle(Protocol):
    deterministic: bool

    def generative(self, pack: CandidatePack) -> np.ndarray:
        """Raw weights over candidates plus the no-match option."""

    def discriminative(self, pack: CandidatePack) -> np.ndarray:
        """Raw per-candidate acceptance weights plus the no-match weight."""

    def sample_generative(self, pack: CandidatePack, rng) -> Optional[int]:
        """One categorical answer (no-match is ``len(pack)``); None abstains."""

    def sample_discriminative(self, pack: CandidatePack, index: int, rng) -> Optional[bool]:
        """One yes/no answer for candidate ``index``; None abstains."""


# ── Synthetic oracle ──────────────────────────────────────────────

@dataclass
class SyntheticOracleConfig:
    seed: int = 0
    gen_noise: float = 0.0
    disc_noise: float = 0.0
    gen_bias: float = 0.0
    disc_bias: float = 0.0
    temperature: float = 1.0
    gain: float = config.ORACLE_GAIN

    def __post_init__(self):
        if self.gen_noise < 0 or self.disc_noise < 0:
            raise ConfigError("oracle noise must be >= 0")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")


def _stream(cfg: SyntheticOracleConfig, pack: CandidatePack, channel: str) -> np.random.Generator:
    return np.random.default_rng(stable_seed(cfg.seed, channel, pack.digest()))


def _truth(pack: CandidatePack, truth) -> np.ndarray:
    t = np.asarray(pack.truth if truth is None else truth, dtype=float)
    if t.size != len(pack):
        raise ValueError(f"need {len(pack)} truth scores, got {t.size}")
    return t


def _bias_targets(truth: np.ndarray, cfg: SyntheticOracleConfig, pack: CandidatePack):
    """Distinct wrong options receiving the generative and discriminative bias."""
    n = truth.size
    matched = truth >= 1.0
    wrong_candidates = [r for r in range(n) if not matched[r]]
    rng = _stream(cfg, pack, "bias")
    order = list(rng.permutation(wrong_candidates)) if wrong_candidates else []
    disc_target = int(order[0]) if order else None
    gen_pool = [int(r) for r in order if r != disc_target]
    if matched.any():
        gen_pool.append(n)         # no-match is wrong when a true match exists
    gen_target = gen_pool[int(rng.integers(len(gen_pool)))] if gen_pool else None
    return gen_target, disc_target


def channel_noise(cfg: SyntheticOracleConfig, pack: CandidatePack, channel: str) -> np.ndarray:
    """Standard-normal perturbations of one channel (length ``len(pack) + 1``)."""
    return _stream(cfg, pack, channel).standard_normal(len(pack) + 1)


def generative_logits(pack: CandidatePack, truth=None, cfg: SyntheticOracleConfig = None) -> np.ndarray:
    cfg = cfg or SyntheticOracleConfig()
    t = _truth(pack, truth)
    logits = np.append(cfg.gain * t, 0.5 * cfg.gain)
    logits = logits + cfg.gen_noise * channel_noise(cfg, pack, "generative")
    gen_target, _ = _bias_targets(t, cfg, pack)
    if gen_target is not None:
        logits[gen_target] += cfg.gen_bias
    return logits


def discriminative_logits(pack: CandidatePack, truth=None, cfg: SyntheticOracleConfig = None) -> np.ndarray:
    cfg = cfg or SyntheticOracleConfig()
    t = _truth(pack, truth)
    logits = cfg.gain * (t - 0.75)
    logits = logits + cfg.disc_noise * channel_noise(cfg, pack, "discriminative")[:t.size]
    _, disc_target = _bias_targets(t, cfg, pack)
    if disc_target is not None:
        logits[disc_target] += cfg.disc_bias
    return logits


def _softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 0:
        out = np.zeros_like(logits)
        out[int(np.argmax(logits))] = 1.0
        return out
    z = logits / temperature
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def _sigmoid(logits: np.ndarray, temperature: float) -> np.ndarray:
    if temperature == 0:
        return (logits > 0).astype(float)
    return 1.0 / (1.0 + np.exp(-logits / temperature))


def synthetic_generative(pack: CandidatePack, truth=None, cfg: SyntheticOracleConfig = None) -> np.ndarray:
    """Softmax of gain-scaled truth scores, perturbed by the generative noise and bias."""
    cfg = cfg or SyntheticOracleConfig()
    return _softmax(generative_logits(pack, truth, cfg), cfg.temperature)


def synthetic_discriminative(pack: CandidatePack, truth=None, cfg: SyntheticOracleConfig = None) -> np.ndarray:
    """Independent per-candidate acceptance rates with a trailing no-match weight."""
    cfg = cfg or SyntheticOracleConfig()
    acceptance = _sigmoid(discriminative_logits(pack, truth, cfg), cfg.temperature)
    return np.array(append_no_match(acceptance))


class SyntheticOracle:
    """Seeded stand-in for a vision-language model, scored from scene ground truth."""

    deterministic = True

    def __init__(self, cfg: SyntheticOracleConfig = None):
        self.cfg = cfg or SyntheticOracleConfig()

    def generative(self, pack: CandidatePack) -> np.ndarray:
        return synthetic_generative(pack, None, self.cfg)

    def discriminative(self, pack: CandidatePack) -> np.ndarray:
        return synthetic_discriminative(pack, None, self.cfg)

    def sample_generative(self, pack: CandidatePack, rng) -> Optional[int]:
        p = self.generative(pack)
        if self.cfg.temperature == 0:
            return int(np.argmax(p))
        return int(rng.choice(p.size, p=p))

    def sample_discriminative(self, pack: CandidatePack, index: int, rng) -> Optional[bool]:
        logit = discriminative_logits(pack, None, self.cfg)[index]
        p_yes = float(_sigmoid(np.array([logit]), self.cfg.temperature)[0])
        if self.cfg.temperature == 0:
            return p_yes > 0.5
        return bool(rng.random() < p_yes)


def estimate_distribution(oracle: Oracle, pack: CandidatePack, n: int, rng=None,
                          channel: str = "generative") -> np.ndarray:
    """Empirical answer weights from ``n`` oracle samples.

    Generative: counts per option, abstentions dropped. Discriminative:
    per-candidate yes-rates with a trailing no-match weight.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if channel not in MODES:
        raise ValueError(f"unknown channel {channel!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if channel == "generative":
        counts = np.zeros(len(pack) + 1)
        for _ in range(n):
            answer = oracle.sample_generative(pack, rng)
            if answer is not None:
                counts[answer] += 1
        return counts
    rates = []
    for index in range(len(pack)):
        yes = answered = 0
        for _ in range(n):
            answer = oracle.sample_discriminative(pack, index, rng)
            if answer is None:
                continue
            answered += 1
            yes += int(answer)
        rates.append(yes / answered if answered else 0.5)
    return np.array(append_no_match(rates))


# ── Remote oracle ─────────────────────────────────────────────────

@dataclass
class RemoteOracleConfig:
    base_url: str = config.REMOTE_BASE_URL
    model: str = config.REMOTE_MODEL
    temperature: float = config.REMOTE_TEMPERATURE
    n: int = config.ORACLE_SAMPLES
    timeout: float = config.REMOTE_TIMEOUT
    max_in_flight: int = config.REMOTE_MAX_IN_FLIGHT
    prompt_version: str = config.PROMPT_VERSION
    max_retries: int = config.MAX_RETRIES
    backoff: float = config.RETRY_BACKOFF

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("remote sample count n must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")


_DIRECTIONS = ((45.0, "to the right"), (135.0, "in front"), (225.0, "to the left"),
               (315.0, "behind"), (360.0, "to the right"))


def _direction(bearing: float) -> str:
    for limit, word in _DIRECTIONS:
        if bearing <= limit:
            return word
    return "to the right"


def _describe(vector: np.ndarray, vocabulary) -> str:
    category, attrs = describe_embedding(vector, vocabulary)
    return " ".join(attrs + (category,))


def render_candidate(cand: PackedCandidate, vocabulary, label: int) -> str:
    lines = [
        f"Candidate {label}:",
        f"  close view: a {_describe(cand.first_person, vocabulary)}",
        f"  overview: a {_describe(cand.top_down, vocabulary)}",
    ]
    if cand.context:
        nearby = "; ".join(f"{cat} {dist:.1f} m {_direction(bearing)}"
                           for cat, bearing, dist in cand.context)
        lines.append(f"  surroundings: {nearby}")
    else:
        lines.append("  surroundings: nothing within reach")
    return "\n".join(lines)


def load_prompt(mode: str, version: str = config.PROMPT_VERSION) -> str:
    path = os.path.join(config.PROMPT_DIR, f"{mode}_{version}.txt")
    try:
        with open(path, "r") as f:
            return f.read()
    except FileNotFoundError as exc:
        raise ConfigError(f"no {mode} prompt template for version {version!r}") from exc


def remote_prompt(pack: CandidatePack, mode: str, cfg: RemoteOracleConfig = None,
                  index: int = 0) -> dict:
    """Chat-completion request body for one question about ``pack``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    cfg = cfg or RemoteOracleConfig()
    template = load_prompt(mode, cfg.prompt_version)
    if mode == "generative":
        blocks = "\n\n".join(render_candidate(c, pack.vocabulary, c.index) for c in pack.candidates)
    else:
        blocks = render_candidate(pack.candidates[index], pack.vocabulary, 0)
    content = template.format(
        query=pack.query.raw_text,
        candidates=blocks,
        n_candidates=len(pack),
        last_id=len(pack) - 1,
    )
    return {
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": content}],
    }


_GEN_RE = re.compile(r"candidate\s*[:=]?\s*(\d+|none)", re.IGNORECASE)
_DISC_RE = re.compile(r"(yes|no)[.!]?", re.IGNORECASE)


def parse_generative(text: str, n_candidates: int) -> int:
    """``candidate: <id>`` or ``candidate: none`` (mapped to the no-match index)."""
    m = _GEN_RE.fullmatch(text.strip())
    if not m:
        raise MalformedResponse(text, "generative")
    token = m.group(1).lower()
    if token == "none":
        return n_candidates
    answer = int(token)
    if answer >= n_candidates:
        raise MalformedResponse(text, "generative")
    return answer


def parse_discriminative(text: str) -> bool:
    m = _DISC_RE.fullmatch(text.strip())
    if not m:
        raise MalformedResponse(text, "discriminative")
    return m.group(1).lower() == "yes"


def is_transient(exc: requests.RequestException) -> bool:
    """Client errors other than 429 are permanent; everything else may be retried."""
    response = getattr(exc, "response", None)
    if response is None:
        return True
    return response.status_code == 429 or response.status_code >= 500


class RemoteOracle:
    """Chat-completion client with bounded in-flight requests."""

    deterministic = False

    def __init__(self, cfg: RemoteOracleConfig = None, session: requests.Session = None):
        self.cfg = cfg or RemoteOracleConfig()
        if session is None:
            session = requests.Session()
            adapter = HTTPAdapter(
                pool_connections=self.cfg.max_in_flight,
                pool_maxsize=self.cfg.max_in_flight,
                max_retries=0,
            )
            session.mount("https://", adapter)
            session.mount("http://", adapter)
        self.session = session
        self._slots = threading.BoundedSemaphore(self.cfg.max_in_flight)
        key = config.api_key()
        if key:
            self.session.headers["Authorization"] = f"Bearer {key}"
        else:
            log.warning("%s is not set; sending unauthenticated requests", config.API_KEY_ENV)
        self._post = retry(self.cfg.max_retries, self.cfg.backoff, exceptions=(requests.RequestException,),
                           retry_if=is_transient)(self._post_once)

    @property
    def url(self) -> str:
        return self.cfg.base_url.rstrip("/") + "/chat/completions"

    def _post_once(self, payload: dict) -> dict:
        resp = self.session.post(self.url, json=payload, timeout=self.cfg.timeout)
        resp.raise_for_status()
        return resp.json()

    def complete(self, payload: dict) -> str:
        with self._slots:
            try:
                data = self._post(payload)
            except requests.RequestException as exc:
                raise OracleUnavailable(f"{self.url}: {exc}") from exc
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            return ""

    def sample_generative(self, pack: CandidatePack, rng=None) -> Optional[int]:
        text = self.complete(remote_prompt(pack, "generative", self.cfg))
        try:
            return parse_generative(text, len(pack))
        except MalformedResponse as exc:
            log.warning("Abstention: %s", exc)
            return None

    def sample_discriminative(self, pack: CandidatePack, index: int, rng=None) -> Optional[bool]:
        text = self.complete(remote_prompt(pack, "discriminative", self.cfg, index))
        try:
            return parse_discriminative(text)
        except MalformedResponse as exc:
            log.warning("Abstention: %s", exc)
            return None

    def generative(self, pack: CandidatePack) -> np.ndarray:
        return estimate_distribution(self, pack, self.cfg.n, channel="generative")

    def discriminative(self, pack: CandidatePack) -> np.ndarray:
        return estimate_distribution(self, pack, self.cfg.n, channel="discriminative")
