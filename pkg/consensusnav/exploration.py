"""Frontier scoring, the bounded frontier-selection rule and the candidate list."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .errors import ConfigError, NoFrontier, Unreachable
from .mapping import ExplorationMap, Frontier, ObjectCentricMap, SimilarityGrids
from .planning import DistanceField
from .world import AgentPose

log = logging.getLogger(__name__)

CANDIDATE_STATUSES = ("tentative", "pending_identification", "confirmed", "rejected")
# confirmed and rejected are both terminal
_RANK = dict(zip(CANDIDATE_STATUSES, (0, 1, 2, 2)))


@dataclass(frozen=True)
class Bound:
    inf: float = config.BOUND_INF
    sup: float = config.BOUND_SUP

    def __post_init__(self):
        if not self.inf < self.sup:
            raise ConfigError(f"bound inf {self.inf} must be below sup {self.sup}")


@dataclass
class ExplorationConfig:
    lambda_cu: float = config.LAMBDA_CU
    window_utility_m: float = config.WINDOW_UTILITY_M
    window_semantic_cells: int = config.WINDOW_SEMANTIC_CELLS
    bound: Bound = field(default_factory=Bound)
    cand_tentative: float = config.CAND_TENTATIVE
    cand_confirm: float = config.CAND_CONFIRM
    approach_m: float = config.APPROACH_M
    mode: str = "full"

    def __post_init__(self):
        if isinstance(self.bound, dict):
            self.bound = Bound(**self.bound)
        if self.mode not in config.EXPLORATION_MODES:
            raise ConfigError(f"unknown exploration mode {self.mode!r}")
        if not 0.0 <= self.cand_tentative <= self.cand_confirm <= 1.0:
            raise ConfigError("candidate thresholds must satisfy 0 <= tentative <= confirm <= 1")
        if self.lambda_cu < 0 or self.window_utility_m <= 0 or self.window_semantic_cells < 0:
            raise ConfigError("invalid frontier scoring window or weight")


@dataclass(frozen=True)
class FrontierScore:
    geo: float
    sem_obj: float
    sem_img: float
    distance: float = 0.0


def _window(grid: np.ndarray, center: tuple[float, float], half: int) -> np.ndarray:
    h, w = grid.shape
    cx = int(math.floor(center[0] + 0.5))
    cy = int(math.floor(center[1] + 0.5))
    return grid[max(0, cy - half):min(h, cy + half + 1), max(0, cx - half):min(w, cx + half + 1)]


def unknown_fraction(f: Frontier, expl: ExplorationMap, window_m: float = config.WINDOW_UTILITY_M) -> float:
    half = int(round(window_m / (2.0 * expl.cell_size)))
    win = _window(expl.explored, f.centroid, half)
    return float((~win).sum()) / win.size if win.size else 0.0


def score_geometry(f: Frontier, expl: ExplorationMap, pose: AgentPose, lambda_cu: float,
                   distances: DistanceField, window_m: float = config.WINDOW_UTILITY_M) -> float:
    """Cost-utility score U(f) - lambda * C(f).

    ``distances`` is the field rooted at the agent cell; C(f) is its value at
    the frontier anchor over the map diagonal.
    """
    d = distances.at(f.anchor)
    if not math.isfinite(d):
        raise Unreachable(f"frontier at {f.anchor} is unreachable")
    diagonal = math.hypot(expl.width, expl.height) * expl.cell_size
    return unknown_fraction(f, expl, window_m) - lambda_cu * d / diagonal


def score_semantic(f: Frontier, grids: SimilarityGrids,
                   window: int = config.WINDOW_SEMANTIC_CELLS) -> tuple[float, float]:
    half = window // 2
    obj = _window(grids.obj_sem, f.centroid, half)
    img = _window(grids.img_sem, f.centroid, half)
    return (float(obj.max()) if obj.size else 0.0, float(img.max()) if img.size else 0.0)


def score_frontiers(frontiers, expl: ExplorationMap, grids: SimilarityGrids, pose: AgentPose,
                    distances: DistanceField, cfg: ExplorationConfig = None):
    """Score every reachable frontier; unreachable ones are dropped."""
    cfg = cfg or ExplorationConfig()
    kept, scores = [], []
    for f in frontiers:
        try:
            geo = score_geometry(f, expl, pose, cfg.lambda_cu, distances, cfg.window_utility_m)
        except Unreachable:
            log.debug("Skipping unreachable frontier at %s", f.anchor)
            continue
        sem_obj, sem_img = score_semantic(f, grids, cfg.window_semantic_cells)
        kept.append(f)
        scores.append(FrontierScore(geo, sem_obj, sem_img, distances.at(f.anchor)))
    return kept, scores


def select_frontier_with_branch(frontiers, scores, bound: Bound = None, mode: str = "full"):
    """Bounded selection rule; returns ``(frontier, branch)``."""
    if not frontiers:
        raise NoFrontier("no frontier to select")
    bound = bound or Bound()
    pairs = list(zip(frontiers, scores))

    def best(value):
        return max(pairs, key=lambda p: (value(p[1]), -p[1].distance,
                                         -p[0].anchor[1], -p[0].anchor[0]))[0]

    if mode == "nearest":
        chosen = min(pairs, key=lambda p: (p[1].distance, p[0].anchor[1], p[0].anchor[0]))[0]
        return chosen, "nearest"
    if mode != "no_obj_sem" and max(s.sem_obj for s in scores) > bound.sup:
        return best(lambda s: s.sem_obj), "obj_sem"
    if mode != "no_img_sem" and max(s.sem_img for s in scores) > bound.inf:
        return best(lambda s: s.sem_img), "img_sem"
    return best(lambda s: s.geo), "geometry"


def select_frontier(frontiers, scores, bound: Bound = None, mode: str = "full") -> Frontier:
    return select_frontier_with_branch(frontiers, scores, bound, mode)[0]


# ── Candidate targets ─────────────────────────────────────────────

@dataclass(eq=False)
class CandidateTarget:
    map_id: int
    best_similarity: float
    status: str = "tentative"
    views: list = field(default_factory=list)
    inspected: bool = False

    def advance(self, status: str) -> bool:
        """Move forward in the status lattice; backward or sideways moves are refused."""
        if status not in _RANK:
            raise ValueError(f"unknown candidate status {status!r}")
        if _RANK[status] <= _RANK[self.status]:
            return False
        log.debug("Candidate %d: %s -> %s", self.map_id, self.status, status)
        self.status = status
        return True


MAX_VIEWS = 4


def update_candidates(objmap: ObjectCentricMap, candidates: dict, cfg: ExplorationConfig = None,
                      has_relations: bool = True) -> list[CandidateTarget]:
    """Promote map objects by their best similarity; returns the candidates that changed.

    ``candidates`` maps ``map_id`` to :class:`CandidateTarget` and is updated
    in place.
    """
    cfg = cfg or ExplorationConfig()
    changed = []
    for obj in sorted(objmap.objects, key=lambda o: o.map_id):
        s = obj.best_similarity
        if s >= cfg.cand_confirm:
            target = "pending_identification" if has_relations else "confirmed"
        elif s >= cfg.cand_tentative:
            target = "tentative"
        else:
            continue
        cand = candidates.get(obj.map_id)
        if cand is None:
            cand = CandidateTarget(obj.map_id, s, status="tentative")
            candidates[obj.map_id] = cand
            obj.mark("candidate")
            cand.advance(target)
            changed.append(cand)
        elif cand.advance(target):
            changed.append(cand)
        cand.best_similarity = max(cand.best_similarity, s)
        if not cand.views or cand.views[-1][2] != obj.view_count:
            cand.views.append((obj.best_view.copy(), obj.embedding.copy(), obj.view_count))
            del cand.views[:-MAX_VIEWS]
    return changed


def reject(candidates: dict, objmap: ObjectCentricMap, map_ids) -> None:
    for map_id in map_ids:
        if candidates[map_id].advance("rejected"):
            objmap.get(map_id).mark("rejected")


def candidates_with_status(candidates: dict, status: str) -> list[CandidateTarget]:
    return [c for _, c in sorted(candidates.items()) if c.status == status]
