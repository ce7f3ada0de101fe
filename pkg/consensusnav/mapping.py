"""Object-centric map association, exploration map, frontiers and similarity grids."""

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from skimage import measure
from skimage.morphology import binary_dilation, disk

from . import config
from .errors import ConfigError
from .world import AgentPose, Cell, GridScene, Observation, token_embedding

log = logging.getLogger(__name__)

OBJECT_STATUSES = ("active", "candidate", "rejected")


@dataclass
class MappingConfig:
    w_geo: float = config.MERGE_W_GEO
    w_sem: float = config.MERGE_W_SEM
    merge_threshold: float = config.MERGE_THRESHOLD
    obstacle_dilation: int = config.OBSTACLE_DILATION
    min_frontier_size: int = config.MIN_FRONTIER_SIZE

    def __post_init__(self):
        if self.w_geo < 0 or self.w_sem < 0:
            raise ConfigError("merge weights must be non-negative")
        if self.obstacle_dilation < 0:
            raise ConfigError("obstacle_dilation must be >= 0")
        if self.min_frontier_size < 1:
            raise ConfigError("min_frontier_size must be >= 1")


def to_unit_interval(cos: float) -> float:
    """Map a cosine in [-1, 1] onto [0, 1]."""
    return min(1.0, max(0.0, (float(cos) + 1.0) / 2.0))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


# ── Object-centric map ────────────────────────────────────────────

@dataclass(eq=False)
class MapObject:
    map_id: int
    footprint: set
    embedding: np.ndarray
    view_count: int = 1
    status: str = "active"
    source_ids: Counter = field(default_factory=Counter)
    best_view: np.ndarray = None
    best_view_distance: float = float("inf")
    best_similarity: float = 0.0
    _sum: np.ndarray = None
    _cache: dict = field(default_factory=dict)

    def similarity(self, query_key: str, query_embedding: np.ndarray) -> float:
        """(cos + 1) / 2 against the query, cached per query until the next merge."""
        if query_key not in self._cache:
            self._cache[query_key] = to_unit_interval(self.embedding @ query_embedding)
        return self._cache[query_key]

    @property
    def similarities(self) -> dict:
        return dict(self._cache)

    @property
    def dominant_source(self) -> int:
        """Ground-truth id seen most often (ties to the lower id)."""
        return min(self.source_ids, key=lambda oid: (-self.source_ids[oid], oid))

    def mark(self, status: str):
        if status not in OBJECT_STATUSES:
            raise ValueError(f"unknown object status {status!r}")
        self.status = status

    def absorb(self, descriptor: np.ndarray, footprint, distance: float, source_id: int):
        self.footprint |= set(footprint)
        self._sum = self._sum + descriptor
        norm = np.linalg.norm(self._sum)
        if norm > 0:
            self.embedding = self._sum / norm
        self.view_count += 1
        self.source_ids[source_id] += 1
        if distance < self.best_view_distance:
            self.best_view, self.best_view_distance = descriptor.copy(), distance
        self._cache.clear()


class ObjectCentricMap:
    """Merged object instances, optionally tracking similarity to one query."""

    def __init__(self, query_key: str = None, query_embedding: np.ndarray = None):
        self.objects: list[MapObject] = []
        self.next_id = 0
        self.query_key = query_key
        self.query_embedding = query_embedding

    def __len__(self):
        return len(self.objects)

    def get(self, map_id: int) -> MapObject:
        for obj in self.objects:
            if obj.map_id == map_id:
                return obj
        raise KeyError(map_id)

    def _spawn(self, descriptor, footprint, distance, source_id) -> MapObject:
        obj = MapObject(
            map_id=self.next_id,
            footprint=set(footprint),
            embedding=descriptor / np.linalg.norm(descriptor),
            source_ids=Counter({source_id: 1}),
            best_view=descriptor.copy(),
            best_view_distance=distance,
            _sum=descriptor.copy(),
        )
        self.next_id += 1
        self.objects.append(obj)
        return obj


def merge_score(footprint, descriptor, obj: MapObject, cfg: MappingConfig) -> float:
    fp = set(footprint)
    union = len(fp | obj.footprint)
    iou = len(fp & obj.footprint) / union if union else 0.0
    return cfg.w_geo * iou + cfg.w_sem * _cosine(descriptor, obj.embedding)


def integrate(objmap: ObjectCentricMap, obs: Observation, pose: AgentPose = None,
              cfg: MappingConfig = None) -> ObjectCentricMap:
    """Associate each detection with the best-scoring map object or spawn a new one."""
    cfg = cfg or MappingConfig()
    for det in obs.detections:
        best, best_score = None, -np.inf
        for obj in objmap.objects:
            score = merge_score(det.visible_footprint, det.descriptor, obj, cfg)
            if score > best_score:
                best, best_score = obj, score
        if best is not None and best_score >= cfg.merge_threshold:
            best.absorb(det.descriptor, det.visible_footprint, det.distance, det.object_id)
            touched = best
        else:
            touched = objmap._spawn(det.descriptor, det.visible_footprint, det.distance,
                                    det.object_id)
            log.debug("New map object %d (%d cells)", touched.map_id, len(touched.footprint))
        if objmap.query_embedding is not None:
            sim = touched.similarity(objmap.query_key, objmap.query_embedding)
            touched.best_similarity = max(touched.best_similarity, sim)
    return objmap


# ── Exploration map ───────────────────────────────────────────────

class ExplorationMap:
    """Obstacle and explored channels the agent builds from its own observations."""

    def __init__(self, width: int, height: int, cell_size: float = config.CELL_SIZE):
        self.width = width
        self.height = height
        self.cell_size = cell_size
        self.obstacle = np.zeros((height, width), dtype=bool)
        self.explored = np.zeros((height, width), dtype=bool)
        self.version = 0           # bumped whenever the obstacle channel changes

    @classmethod
    def for_scene(cls, scene: GridScene) -> "ExplorationMap":
        return cls(scene.width, scene.height, scene.cell_size)

    @property
    def explored_count(self) -> int:
        return int(self.explored.sum())

    def mark_collision(self, cell: Cell):
        x, y = cell
        if 0 <= x < self.width and 0 <= y < self.height and not self.obstacle[y, x]:
            self.obstacle[y, x] = True
            self.explored[y, x] = True
            self.version += 1
            log.debug("Collision marked at %s", cell)

    def frontier_mask(self, dilation: int = config.OBSTACLE_DILATION) -> np.ndarray:
        unknown = ~self.explored
        near_unknown = np.zeros_like(unknown)
        near_unknown[1:, :] |= unknown[:-1, :]
        near_unknown[:-1, :] |= unknown[1:, :]
        near_unknown[:, 1:] |= unknown[:, :-1]
        near_unknown[:, :-1] |= unknown[:, 1:]
        band = binary_dilation(self.obstacle, disk(dilation)) if dilation > 0 else self.obstacle
        return self.explored & ~self.obstacle & near_unknown & ~band

    @property
    def frontier_cells(self) -> frozenset:
        ys, xs = np.nonzero(self.frontier_mask())
        return frozenset(zip(xs.tolist(), ys.tolist()))

    def traversible(self, dilate: int = config.PLANNING_INFLATION) -> np.ndarray:
        """Free mask for planning: unknown cells count as free."""
        blocked = self.obstacle
        if dilate > 0:
            blocked = binary_dilation(blocked, np.ones((2 * dilate + 1, 2 * dilate + 1), bool))
        return ~blocked


def update_exploration(expl: ExplorationMap, obs: Observation, pose: AgentPose = None) -> ExplorationMap:
    """Mark visible cells explored and visible obstacles as obstacles."""
    for x, y in obs.visible_cells:
        expl.explored[y, x] = True
    new_obstacles = [c for c in obs.obstacle_cells if not expl.obstacle[c[1], c[0]]]
    for x, y in new_obstacles:
        expl.obstacle[y, x] = True
    if new_obstacles:
        expl.version += 1
    return expl


# ── Frontiers ─────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Frontier:
    cells: frozenset
    centroid: tuple[float, float]  # mean cell coordinate (x, y)
    anchor: Cell                   # member cell nearest the centroid

    @property
    def size(self) -> int:
        return len(self.cells)


def extract_frontiers(expl: ExplorationMap, cfg: MappingConfig = None) -> list[Frontier]:
    """8-connected clusters of frontier cells, small clusters dropped."""
    cfg = cfg or MappingConfig()
    labels = measure.label(expl.frontier_mask(cfg.obstacle_dilation), connectivity=2)
    frontiers = []
    for region in measure.regionprops(labels):
        if region.area < cfg.min_frontier_size:
            continue
        cells = frozenset((int(c), int(r)) for r, c in region.coords)
        cx = float(np.mean([c[0] for c in cells]))
        cy = float(np.mean([c[1] for c in cells]))
        anchor = min(cells, key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c[1], c[0]))
        frontiers.append(Frontier(cells, (cx, cy), anchor))
    frontiers.sort(key=lambda f: (f.anchor[1], f.anchor[0]))
    return frontiers


# ── Similarity grids ──────────────────────────────────────────────

@dataclass(eq=False)
class SimilarityGrids:
    obj_sem: np.ndarray
    img_sem: np.ndarray

    @classmethod
    def empty(cls, height: int, width: int) -> "SimilarityGrids":
        return cls(np.zeros((height, width)), np.zeros((height, width)))


def frame_similarity(obs: Observation, query_embedding: np.ndarray) -> float:
    """Similarity of the mean detection descriptor of a frame (0 without detections)."""
    if not obs.detections:
        return 0.0
    mean = np.mean([d.descriptor for d in obs.detections], axis=0)
    return to_unit_interval(_cosine(mean, query_embedding))


def stamp_frame(img_sem: np.ndarray, obs: Observation, query_embedding: np.ndarray) -> np.ndarray:
    """Fold one frame into an image-similarity grid (cell-wise max)."""
    value = frame_similarity(obs, query_embedding)
    if value > 0 and obs.visible_cells:
        xs, ys = zip(*obs.visible_cells)
        ys, xs = np.asarray(ys), np.asarray(xs)
        img_sem[ys, xs] = np.maximum(img_sem[ys, xs], value)
    return img_sem


def object_similarity_grid(objmap: ObjectCentricMap, query_embedding: np.ndarray,
                           shape: tuple[int, int]) -> np.ndarray:
    grid = np.zeros(shape)
    for obj in objmap.objects:
        value = to_unit_interval(obj.embedding @ query_embedding)
        for x, y in obj.footprint:
            grid[y, x] = max(grid[y, x], value)
    return grid


def build_similarity_grids(objmap: ObjectCentricMap, history, query_embedding: np.ndarray,
                           shape: tuple[int, int]) -> SimilarityGrids:
    """Project object and frame similarities onto the 2D grid."""
    grids = SimilarityGrids.empty(*shape)
    grids.obj_sem = object_similarity_grid(objmap, query_embedding, shape)
    for obs in history:
        stamp_frame(grids.img_sem, obs, query_embedding)
    return grids


# ── Descriptions and debug dumps ──────────────────────────────────

def describe_embedding(embedding: np.ndarray, vocabulary,
                       threshold: float = config.DESCRIBE_ATTRIBUTE_COS) -> tuple[str, tuple[str, ...]]:
    """Decode an embedding into its nearest category and the attributes it leans toward."""
    categories, attributes = vocabulary
    dim = embedding.shape[0]
    if not categories:
        return "object", ()
    category = max(categories, key=lambda c: (float(token_embedding(c, dim) @ embedding), c))
    attrs = tuple(a for a in attributes if float(token_embedding(a, dim) @ embedding) > threshold)
    return category, attrs


def dump_maps(expl: ExplorationMap, objmap: ObjectCentricMap, agent_cell: Cell = None,
              dilation: int = config.OBSTACLE_DILATION):
    """Plain-text grid plus a JSON-ready object list."""
    frontier = expl.frontier_mask(dilation)
    rows = []
    for y in range(expl.height):
        row = []
        for x in range(expl.width):
            if agent_cell == (x, y):
                row.append("A")
            elif expl.obstacle[y, x]:
                row.append("#")
            elif frontier[y, x]:
                row.append("F")
            elif expl.explored[y, x]:
                row.append(".")
            else:
                row.append("?")
        rows.append("".join(row))
    objects = [
        {
            "map_id": obj.map_id,
            "footprint": sorted([list(c) for c in obj.footprint], key=lambda c: (c[1], c[0])),
            "embedding": [round(float(v), 6) for v in obj.embedding],
            "similarities": {k: round(v, 6) for k, v in sorted(obj.similarities.items())},
            "view_count": obj.view_count,
            "status": obj.status,
        }
        for obj in sorted(objmap.objects, key=lambda o: o.map_id)
    ]
    return "\n".join(rows) + "\n", objects
