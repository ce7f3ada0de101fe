"""KL-regularized Generator/Discriminator equilibrium search.

Both players start from oracle-derived policies over the candidate support
(the last element is the explicit no-match option), keep running averages of
the opponent's policies, and update with the piKL rule::

    pi(t+1)(r) ~ exp{ (Q(r) + lambda * log pi(1)(r)) / (1/(eta t) + lambda) }

The final target is the argmax of the product of the two final policies.
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import config
from .errors import ConfigError, DegenerateInput

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9


class _NoMatch:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NoMatch"


NO_MATCH = _NoMatch()


@dataclass(frozen=True, eq=False)
class PolicyDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise DegenerateInput("policy support needs at least two options")
        if p.min() < 0 or abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise DegenerateInput(f"not a distribution: {p.tolist()}")
        object.__setattr__(self, "probs", p)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(range(self.probs.size))

    @property
    def no_match_index(self) -> int:
        return self.probs.size - 1

    def __len__(self):
        return self.probs.size

    def __getitem__(self, r):
        return float(self.probs[r])


@dataclass
class EquilibriumConfig:
    eta_g: float = config.ETA
    eta_d: float = config.ETA
    lambda_g: float = config.KL_WEIGHT
    lambda_d: float = config.KL_WEIGHT
    iters: int = config.ITERS
    bias: float = config.POLICY_BIAS
    early_exit_tv: float = config.EARLY_EXIT_TV
    patience: int = config.EARLY_EXIT_PATIENCE

    def __post_init__(self):
        if min(self.eta_g, self.eta_d, self.lambda_g, self.lambda_d) <= 0:
            raise ConfigError("eta and lambda must be positive")
        if self.iters < 1:
            raise ConfigError("iters must be >= 1")
        if self.bias < 0:
            raise ConfigError("bias must be >= 0")


def _as_probs(pi) -> np.ndarray:
    return pi.probs if isinstance(pi, PolicyDistribution) else np.asarray(pi, dtype=float)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(_as_probs(p) - _as_probs(q)).sum())


# ── Initial policies ──────────────────────────────────────────────

def _initial_policy(weights, bias: float) -> PolicyDistribution:
    try:
        exact = [Fraction(w) for w in weights]
    except (TypeError, ValueError, OverflowError) as exc:
        raise DegenerateInput(f"weights must be finite numbers: {weights!r}") from exc
    if len(exact) < 2:
        raise DegenerateInput("policy support needs at least two options")
    if any(w < 0 for w in exact):
        raise DegenerateInput(f"negative oracle weight in {list(weights)!r}")
    total = sum(exact)
    b = Fraction(bias)
    if total == 0:
        if b == 0:
            raise DegenerateInput("all weights are zero and bias is 0")
        normalized = [Fraction(0)] * len(exact)
    else:
        normalized = [w / total for w in exact]
    denom = 1 + len(exact) * b
    return PolicyDistribution(np.array([float((p + b) / denom) for p in normalized]))


def init_policies(gen_weights, disc_weights, bias: float = config.POLICY_BIAS):
    """Normalize raw oracle weights, smooth by ``bias`` and renormalize.

    The raw weights are normalized exactly (rational arithmetic) before the
    bias is added, so rescaling them by an exactly representable factor does
    not change a single bit of the resulting policies.
    """
    return _initial_policy(gen_weights, bias), _initial_policy(disc_weights, bias)


def append_no_match(acceptances) -> list[float]:
    """Discriminator weights with a no-match entry of prod(1 - a_r)."""
    acc = [min(1.0, max(0.0, float(a))) for a in acceptances]
    return acc + [float(np.prod([1.0 - a for a in acc]))]


# ── Game state and updates ────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GameState:
    init_g: PolicyDistribution
    init_d: PolicyDistribution
    pi_g: PolicyDistribution
    pi_d: PolicyDistribution
    sum_g: np.ndarray              # sum of pi_G(1..t)
    sum_d: np.ndarray              # sum of pi_D(1..t)
    t: int = 1
    q_g: np.ndarray = None
    q_d: np.ndarray = None

    @classmethod
    def start(cls, pi_g: PolicyDistribution, pi_d: PolicyDistribution) -> "GameState":
        if len(pi_g) != len(pi_d):
            raise DegenerateInput("policies must share their support")
        return cls(pi_g, pi_d, pi_g, pi_d, pi_g.probs.copy(), pi_d.probs.copy())

    def advance(self, new_g: PolicyDistribution, new_d: PolicyDistribution) -> "GameState":
        return replace(self, pi_g=new_g, pi_d=new_d, sum_g=self.sum_g + new_g.probs,
                       sum_d=self.sum_d + new_d.probs, t=self.t + 1)


def q_update(state: GameState) -> GameState:
    """Q_G = mean of pi_D over 1..t halved, and symmetrically for Q_D."""
    if state.t < 1:
        raise ValueError("t must be >= 1")
    scale = 1.0 / (2.0 * state.t)
    return replace(state, q_g=state.sum_d * scale, q_d=state.sum_g * scale)


def policy_update(q, initial, eta: float, lam: float, t: int) -> PolicyDistribution:
    """piKL step, evaluated in log space with max-subtraction."""
    logits = (np.asarray(q, dtype=float) + lam * np.log(_as_probs(initial))) / (1.0 / (eta * t) + lam)
    logits = logits - logits.max()
    weights = np.exp(logits)
    return PolicyDistribution(weights / weights.sum())


def expected_agreement(pair) -> float:
    """Bilinear utility term (1/2) * sum_r pi_G(r) pi_D(r)."""
    pi_g, pi_d = pair
    return 0.5 * float(_as_probs(pi_g) @ _as_probs(pi_d))


def kl_penalty(pi, initial, lam: float) -> float:
    """lambda * KL(pi || initial)."""
    p = _as_probs(pi)
    q = _as_probs(initial)
    mask = p > 0
    return float(lam * np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


# ── Full search ───────────────────────────────────────────────────

@dataclass(frozen=True)
class TracePoint:
    t: int
    agreement: float
    tv_g: float                    # distance of pi_G(t) from pi_G(1)
    tv_d: float


@dataclass(eq=False)
class EquilibriumResult:
    pi_g: PolicyDistribution
    pi_d: PolicyDistribution
    initial: tuple
    history_g: np.ndarray          # row tau-1 is pi_G(tau)
    history_d: np.ndarray
    trace: list = field(default_factory=list)
    iterations: int = 0
    config: EquilibriumConfig = None

    @property
    def pair(self):
        return self.pi_g, self.pi_d


def run_equilibrium(initial, cfg: EquilibriumConfig = None) -> EquilibriumResult:
    """Iterate ``q_update`` and ``policy_update`` for both players."""
    cfg = cfg or EquilibriumConfig()
    g1, d1 = initial
    state = GameState.start(g1, d1)
    hist_g, hist_d = [g1.probs], [d1.probs]
    trace = [TracePoint(1, expected_agreement((g1, d1)), 0.0, 0.0)]
    calm = 0
    for _ in range(cfg.iters):
        state = q_update(state)
        new_g = policy_update(state.q_g, g1, cfg.eta_g, cfg.lambda_g, state.t)
        new_d = policy_update(state.q_d, d1, cfg.eta_d, cfg.lambda_d, state.t)
        step_tv = max(total_variation(new_g, state.pi_g), total_variation(new_d, state.pi_d))
        state = state.advance(new_g, new_d)
        hist_g.append(new_g.probs)
        hist_d.append(new_d.probs)
        trace.append(TracePoint(state.t, expected_agreement((new_g, new_d)),
                                total_variation(new_g, g1), total_variation(new_d, d1)))
        calm = calm + 1 if step_tv < cfg.early_exit_tv else 0
        if calm >= cfg.patience:
            log.debug("Equilibrium settled after %d iterations", state.t - 1)
            break
    return EquilibriumResult(
        pi_g=state.pi_g,
        pi_d=state.pi_d,
        initial=(g1, d1),
        history_g=np.array(hist_g),
        history_d=np.array(hist_d),
        trace=trace,
        iterations=state.t - 1,
        config=cfg,
    )


def select_target(pi_g, pi_d):
    """Argmax of pi_G * pi_D (lowest index on ties); the last index means NO_MATCH."""
    product = _as_probs(pi_g) * _as_probs(pi_d)
    r = int(np.argmax(product))
    return NO_MATCH if r == product.size - 1 else r


def average_regret(result: EquilibriumResult, player: str, horizon: int) -> float:
    """Time-averaged external regret of one player over the first ``horizon`` rounds.

    Utilities are the KL-regularized bilinear payoffs against the opponent's
    realized policies; the best fixed response has the closed form
    ``lambda * log sum_r pi1(r) exp(Q(r) / lambda)``.
    """
    if player not in ("g", "d"):
        raise ValueError("player must be 'g' or 'd'")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    cfg = result.config or EquilibriumConfig()
    if player == "g":
        own, other, lam, initial = result.history_g, result.history_d, cfg.lambda_g, result.initial[0]
    else:
        own, other, lam, initial = result.history_d, result.history_g, cfg.lambda_d, result.initial[1]
    if horizon > own.shape[0]:
        pad = horizon - own.shape[0]
        own = np.vstack([own, np.repeat(own[-1:], pad, axis=0)])
        other = np.vstack([other, np.repeat(other[-1:], pad, axis=0)])
    own, other = own[:horizon], other[:horizon]
    prior = initial.probs

    q = other.sum(axis=0) / (2.0 * horizon)
    z = q / lam + np.log(prior)
    zmax = z.max()
    best = lam * (zmax + np.log(np.exp(z - zmax).sum()))

    realized = 0.0
    for p, o in zip(own, other):
        realized += 0.5 * float(p @ o) - kl_penalty(p, prior, lam)
    return float(best - realized / horizon)


def write_trace_csv(result: EquilibriumResult, path: str):
    """Diagnostic trace: t, agreement, tv_g, tv_d."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "agreement", "tv_g", "tv_d"])
        for pt in result.trace:
            writer.writerow([pt.t, f"{pt.agreement:.12g}", f"{pt.tv_g:.12g}", f"{pt.tv_d:.12g}"])
