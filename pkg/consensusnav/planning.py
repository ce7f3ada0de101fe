"""Fast-marching distance fields (scikit-fmm), path extraction and discrete action emission."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.ma as ma
import skfmm
from skimage import measure

from . import config
from .errors import GoalBlocked, Unreachable
from .world import AgentPose, Cell

log = logging.getLogger(__name__)

# row-major neighbour order (dy outer, dx inner) fixes every tie-break
_NEIGHBOURS = tuple(
    (dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)
)


@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray             # float [y, x], inf where unreachable
    obstacles: np.ndarray          # bool [y, x]
    goals: frozenset
    cell_size: float = config.CELL_SIZE

    def at(self, cell: Cell) -> float:
        x, y = cell
        h, w = self.values.shape
        if not (0 <= x < w and 0 <= y < h):
            return math.inf
        return float(self.values[y, x])

    def reachable(self, cell: Cell) -> bool:
        return math.isfinite(self.at(cell))


@dataclass(frozen=True)
class Path:
    cells: tuple

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, i):
        return self.cells[i]

    def __iter__(self):
        return iter(self.cells)

    def length(self, cell_size: float = config.CELL_SIZE) -> float:
        """Polyline length in metres."""
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.cells, self.cells[1:]):
            total += math.hypot(x1 - x0, y1 - y0)
        return total * cell_size


def move_allowed(obstacles: np.ndarray, cell: Cell, dx: int, dy: int) -> bool:
    """8-connected move test; diagonals need both orthogonal cells free."""
    h, w = obstacles.shape
    x, y = cell
    nx, ny = x + dx, y + dy
    if not (0 <= nx < w and 0 <= ny < h) or obstacles[ny, nx]:
        return False
    if dx and dy and (obstacles[y, nx] or obstacles[ny, x]):
        return False
    return True


def reachable_region(free: np.ndarray, seeds) -> np.ndarray:
    """Free cells 4-connected to any seed cell."""
    labels = measure.label(free, connectivity=1)
    ids = sorted({int(labels[y, x]) for x, y in seeds} - {0})
    return np.isin(labels, ids)


def fmm_field(obstacles: np.ndarray, goals, cell_size: float = config.CELL_SIZE) -> DistanceField:
    """First-order fast-marching distance outward from ``goals``.

    Goal cells carry the zero level set; obstacles and cells cut off from
    every goal are masked out of the march and come back as inf. The
    first-order stencil keeps the field between the straight-line distance
    and the 4-connected path length.
    """
    obstacles = np.asarray(obstacles, dtype=bool)
    h, w = obstacles.shape
    goal_set = frozenset(tuple(g) for g in goals)
    if not goal_set:
        raise ValueError("fmm_field needs at least one goal cell")
    free_goals = sorted(
        (x, y) for x, y in goal_set
        if 0 <= x < w and 0 <= y < h and not obstacles[y, x]
    )
    if not free_goals:
        raise GoalBlocked(f"all {len(goal_set)} goal cells are blocked")

    domain = reachable_region(~obstacles, free_goals)
    phi = np.ones((h, w))
    for x, y in free_goals:
        phi[y, x] = 0.0
    values = np.full((h, w), np.inf)
    if int(domain.sum()) > len(free_goals):
        dist = skfmm.distance(ma.masked_array(phi, mask=~domain), dx=cell_size, order=1)
        values[domain] = np.abs(ma.getdata(dist)[domain])
    for x, y in free_goals:
        values[y, x] = 0.0
    return DistanceField(values, obstacles, frozenset(free_goals), cell_size)


def extract_path(field: DistanceField, start: Cell) -> Path:
    """Steepest descent over allowed 8-moves until a goal cell is reached."""
    if not field.reachable(start):
        raise Unreachable(f"no path from {start} to goals")
    limit = int((~field.obstacles).sum())
    cells = [tuple(start)]
    current = tuple(start)
    while field.at(current) > 0.0:
        best, best_val = None, field.at(current)
        for dx, dy in _NEIGHBOURS:
            if not move_allowed(field.obstacles, current, dx, dy):
                continue
            cand = (current[0] + dx, current[1] + dy)
            val = field.at(cand)
            if val < best_val:
                best, best_val = cand, val
        if best is None or len(cells) > limit:
            raise Unreachable(f"descent stalled at {current}")
        cells.append(best)
        current = best
    return Path(tuple(cells))


def local_goal(path: Path, pose: AgentPose, horizon: float = config.HORIZON_M,
               cell_size: float = config.CELL_SIZE) -> Cell:
    """Farthest cell of the path prefix that stays within ``horizon`` of the pose."""
    if not len(path):
        raise ValueError("local_goal needs a non-empty path")
    chosen = 0
    for i, (x, y) in enumerate(path):
        cx, cy = (x + 0.5) * cell_size, (y + 0.5) * cell_size
        if math.hypot(cx - pose.x, cy - pose.y) > horizon + 1e-9:
            break
        chosen = i
    return path[chosen]


def heading_error(pose: AgentPose, target: tuple[float, float]) -> float:
    """Signed angle in (-180, 180] from the pose heading to ``target``."""
    bearing = math.degrees(math.atan2(target[1] - pose.y, target[0] - pose.x))
    err = (bearing - pose.heading + 180.0) % 360.0 - 180.0
    return 180.0 if err == -180.0 else err


def next_action(pose: AgentPose, waypoint: tuple[float, float], at_goal: bool,
                tolerance: float = config.HEADING_TOL_DEG) -> str:
    """Discrete action toward a metric waypoint."""
    if at_goal:
        return "stop"
    err = heading_error(pose, waypoint)
    if err > tolerance:
        return "turn_left"
    if err < -tolerance:
        return "turn_right"
    return "move_forward"


def geodesic_distance(obstacles: np.ndarray, start: Cell, goals,
                      cell_size: float = config.CELL_SIZE) -> float:
    """Field value at ``start`` for the given goal set (inf when unreachable)."""
    return fmm_field(obstacles, goals, cell_size).at(start)
