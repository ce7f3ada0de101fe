"""Per-episode decision stack: perceive, map, choose a goal, plan and act."""

import logging
import math
from collections import Counter

import numpy as np

from . import config
from .equilibrium import NO_MATCH
from .errors import GoalBlocked, NoFrontier, Unreachable
from .exploration import (
    ExplorationConfig,
    candidates_with_status,
    reject,
    score_frontiers,
    select_frontier_with_branch,
    update_candidates,
)
from .mapping import (
    ExplorationMap,
    MappingConfig,
    ObjectCentricMap,
    SimilarityGrids,
    extract_frontiers,
    integrate,
    object_similarity_grid,
    stamp_frame,
    update_exploration,
)
from .planning import Path, extract_path, fmm_field, local_goal, next_action
from .world import Episode, check_success, observe, step

log = logging.getLogger(__name__)

SPIN_TURNS = 360 // config.TURN_DEG
MAX_FRONTIER_ATTEMPTS = 8


class Agent:
    """Runs one episode.

    ``identify(pending, agent)`` resolves pending candidates and returns a
    ``map_id`` or ``NO_MATCH``; the harness binds it to a policy variant.
    """

    def __init__(self, episode: Episode, identify, mapping: MappingConfig = None,
                 exploration: ExplorationConfig = None, noise=None,
                 fov: float = config.FOV_DEG, sensor_range: float = config.SENSOR_RANGE,
                 replan_every: int = config.REPLAN_EVERY,
                 inflation: int = config.PLANNING_INFLATION,
                 horizon: float = config.HORIZON_M, on_step=None):
        self.episode = episode
        self.scene = episode.scene
        self.query = episode.query
        self.identify = identify
        self.mapping = mapping or MappingConfig()
        self.exploration = exploration or ExplorationConfig()
        self.noise = noise
        self.fov = fov
        self.sensor_range = sensor_range
        self.replan_every = replan_every
        self.inflation = inflation
        self.horizon = horizon
        self.max_steps = episode.max_steps
        self.on_step = on_step

        self.pose = episode.start_pose
        dim = self.scene.objects[0].true_embedding.shape[0] if self.scene.objects else config.EMBEDDING_DIM
        self.objmap = ObjectCentricMap(self.query.key, self.query.embedding(dim))
        self.expl = ExplorationMap.for_scene(self.scene)
        self.img_sem = np.zeros((self.scene.height, self.scene.width))
        self.candidates = {}
        self.has_relations = bool(self.query.relations)

        self.target = None
        self.frontier = None
        self.blacklist = set()
        self.spin_left = SPIN_TURNS
        self.steps = 0
        self.path_length = 0.0
        self.first_candidate_step = -1
        self.explore_start_step = -1
        self.branches = Counter()
        self.identifications = 0

        self._since_replan = 0
        self._event = False
        self._careful = 0
        self._field = None
        self._field_goal = None
        self._field_inflated = True

    # ── Geometry helpers ──────────────────────────────────────────

    @property
    def cell(self):
        return self.scene.cell_of(self.pose.x, self.pose.y)

    @property
    def candidate_search_steps(self) -> int:
        """Steps from the first frontier selection to the first candidate.

        0 when a candidate showed up before exploration began, -1 when none did.
        """
        if self.first_candidate_step < 0:
            return -1
        if self.explore_start_step < 0:
            return 0
        return max(0, self.first_candidate_step - self.explore_start_step)

    def object_center(self, map_id: int) -> tuple[float, float]:
        cs = self.scene.cell_size
        fp = self.objmap.get(map_id).footprint
        return (float(np.mean([(x + 0.5) * cs for x, _ in fp])),
                float(np.mean([(y + 0.5) * cs for _, y in fp])))

    def _distance_to(self, point) -> float:
        return math.hypot(point[0] - self.pose.x, point[1] - self.pose.y)

    def _cells_near(self, center, radius: float) -> set:
        cs = self.scene.cell_size
        reach = int(math.ceil(radius / cs)) + 1
        cx, cy = self.scene.cell_of(*center)
        cells = set()
        for y in range(max(0, cy - reach), min(self.scene.height, cy + reach + 1)):
            for x in range(max(0, cx - reach), min(self.scene.width, cx + reach + 1)):
                if self.expl.obstacle[y, x]:
                    continue
                px, py = (x + 0.5) * cs, (y + 0.5) * cs
                if math.hypot(px - center[0], py - center[1]) <= radius + 1e-9:
                    cells.add((x, y))
        return cells

    def _planning_obstacles(self, inflate: bool) -> np.ndarray:
        blocked = ~self.expl.traversible(self.inflation if inflate else 0)
        x, y = self.cell
        blocked[y, x] = False
        return blocked

    def _line_clear(self, cell, obstacles: np.ndarray) -> bool:
        cs = self.scene.cell_size
        tx, ty = (cell[0] + 0.5) * cs, (cell[1] + 0.5) * cs
        length = math.hypot(tx - self.pose.x, ty - self.pose.y)
        n = max(2, int(math.ceil(length / (cs / 4.0))))
        own = self.cell
        for i in range(n + 1):
            t = i / n
            c = self.scene.cell_of(self.pose.x + t * (tx - self.pose.x),
                                   self.pose.y + t * (ty - self.pose.y))
            if c != own and obstacles[c[1], c[0]]:
                return False
        return True

    # ── Perception and candidates ─────────────────────────────────

    def perceive(self):
        obs = observe(self.scene, self.pose, self.fov, self.sensor_range, self.noise,
                      view_index=self.steps)
        update_exploration(self.expl, obs, self.pose)
        integrate(self.objmap, obs, self.pose, self.mapping)
        stamp_frame(self.img_sem, obs, self.objmap.query_embedding)
        changed = update_candidates(self.objmap, self.candidates, self.exploration,
                                    self.has_relations)
        if changed:
            self._event = True
            if self.first_candidate_step < 0:
                self.first_candidate_step = self.steps
            if any(c.status == "pending_identification" for c in changed):
                self._identify()
            if self.target is None:
                confirmed = candidates_with_status(self.candidates, "confirmed")
                if confirmed:
                    self.target = max(confirmed, key=lambda c: (c.best_similarity, -c.map_id)).map_id
                    log.debug("Target %d confirmed at step %d", self.target, self.steps)
        return obs

    def _identify(self):
        pending = candidates_with_status(self.candidates, "pending_identification")
        if not pending:
            return
        self.identifications += 1
        choice = self.identify(pending, self)
        if choice is NO_MATCH:
            log.debug("No match among %s; exploration continues",
                      [c.map_id for c in pending])
            reject(self.candidates, self.objmap, [c.map_id for c in pending])
        else:
            self.candidates[choice].advance("confirmed")
            if self.target is None:
                self.target = choice
            log.debug("Identified map object %d among %d pending", choice, len(pending))

    # ── Planning ──────────────────────────────────────────────────

    def _valid_cached_path(self):
        try:
            path = extract_path(self._field, self.cell)
        except Unreachable:
            return None
        blocked = self._planning_obstacles(self._field_inflated)
        if any(blocked[y, x] for x, y in path.cells[1:]):
            return None
        return path

    def path_to(self, goal_cells) -> Path:
        """Path from the agent cell, inflated map first, raw obstacles as fallback."""
        key = frozenset(goal_cells)
        if self._field is not None and self._field_goal == key:
            path = self._valid_cached_path()
            if path is not None:
                return path
        for inflate in (True, False):
            try:
                field = fmm_field(self._planning_obstacles(inflate), key, self.scene.cell_size)
                path = extract_path(field, self.cell)
            except (GoalBlocked, Unreachable):
                continue
            self._field, self._field_goal, self._field_inflated = field, key, inflate
            return path
        raise Unreachable(f"no path from {self.cell} to {len(key)} goal cell(s)")

    def _drive(self, goal_cells) -> str:
        path = self.path_to(goal_cells)
        if len(path) == 1:
            return "turn_left"
        idx = path.cells.index(local_goal(path, self.pose, self.horizon, self.scene.cell_size))
        if self._careful:
            idx = min(idx, 1)
        obstacles = self._planning_obstacles(self._field_inflated)
        while idx > 1 and not self._line_clear(path[idx], obstacles):
            idx -= 1
        waypoint = self.scene.cell_center(path[max(idx, 1)])
        return next_action(self.pose, waypoint, False)

    # ── Exploration ───────────────────────────────────────────────

    def _need_replan(self) -> bool:
        if self.frontier is None or self._event or self._since_replan >= self.replan_every:
            return True
        anchor = self.frontier.anchor
        if self.cell == anchor:
            self.blacklist.add(anchor)
            return True
        return not self.expl.frontier_mask(self.mapping.obstacle_dilation)[anchor[1], anchor[0]]

    def select_frontier(self):
        frontiers = [f for f in extract_frontiers(self.expl, self.mapping)
                     if not (f.cells & self.blacklist)]
        if not frontiers:
            raise NoFrontier("exploration exhausted")
        grids = SimilarityGrids(
            object_similarity_grid(self.objmap, self.objmap.query_embedding,
                                   self.img_sem.shape),
            self.img_sem,
        )
        kept, scores = [], []
        for inflate in (True, False):
            distances = fmm_field(self._planning_obstacles(inflate), [self.cell], self.scene.cell_size)
            kept, scores = score_frontiers(frontiers, self.expl, grids, self.pose,
                                           distances, self.exploration)
            if kept:
                break
        if not kept:
            raise NoFrontier("no reachable frontier")
        if self.explore_start_step < 0:
            self.explore_start_step = self.steps
        self.frontier, branch = select_frontier_with_branch(
            kept, scores, self.exploration.bound, self.exploration.mode)
        self.branches[branch] += 1
        self._since_replan = 0
        self._event = False
        log.debug("Step %d: frontier at %s via %s (%d candidates)",
                  self.steps, self.frontier.anchor, branch, len(kept))

    def _explore(self) -> str:
        for _ in range(MAX_FRONTIER_ATTEMPTS):
            if self._need_replan():
                self.select_frontier()
            try:
                return self._drive({self.frontier.anchor})
            except Unreachable:
                self.blacklist.add(self.frontier.anchor)
                self.frontier = None
        raise NoFrontier("no reachable frontier after repeated attempts")

    def _approach_candidate(self):
        waiting = [c for c in candidates_with_status(self.candidates, "tentative") if not c.inspected]
        if not waiting:
            return None
        return min(waiting, key=lambda c: (-c.best_similarity, c.map_id))

    # ── Main loop ─────────────────────────────────────────────────

    def decide(self) -> str:
        if self.target is not None:
            center = self.object_center(self.target)
            goal_cells = self._cells_near(center, config.STOP_NEAR_TARGET_M)
            if self.cell in goal_cells or self._distance_to(center) <= config.STOP_NEAR_TARGET_M:
                return "stop"
            try:
                return self._drive(goal_cells)
            except Unreachable:
                log.debug("Target %d unreachable; stopping", self.target)
                return "stop"

        if self.spin_left > 0:
            self.spin_left -= 1
            return "turn_left"

        cand = self._approach_candidate()
        while cand is not None:
            center = self.object_center(cand.map_id)
            goal_cells = self._cells_near(center, self.exploration.approach_m)
            if self.cell not in goal_cells and self._distance_to(center) > self.exploration.approach_m:
                try:
                    return self._drive(goal_cells)
                except Unreachable:
                    pass
            cand.inspected = True
            self._event = True
            cand = self._approach_candidate()

        return self._explore()

    def act(self, action: str):
        new_pose = step(self.scene, self.pose, action)
        if action == "move_forward":
            if new_pose == self.pose:
                rad = math.radians(self.pose.heading)
                bumped = self.scene.cell_of(
                    self.pose.x + config.FORWARD_STEP * math.cos(rad),
                    self.pose.y + config.FORWARD_STEP * math.sin(rad),
                )
                if bumped != self.cell:
                    self.expl.mark_collision(bumped)
                self._careful = config.COLLISION_CAREFUL_STEPS
            else:
                self.path_length += math.hypot(new_pose.x - self.pose.x, new_pose.y - self.pose.y)
                self._careful = max(0, self._careful - 1)
        self.pose = new_pose

    def run(self) -> str:
        """Drive the episode to termination and return the termination reason."""
        self.perceive()
        while True:
            if self.steps >= self.max_steps:
                return "step_limit"
            try:
                action = self.decide()
            except NoFrontier:
                return "no_frontier"
            if action == "stop":
                self.steps += 1
                return "stopped_success" if check_success(self.pose, self.episode) else "stopped_wrong"
            self.act(action)
            self.steps += 1
            self._since_replan += 1
            self.perceive()
            if self.on_step is not None:
                self.on_step(self, action)
