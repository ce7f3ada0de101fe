"""Deterministic 2D gridworld: scenes, episodes, kinematics and the sensor model.

Cells are addressed as ``(x, y)`` with ``x`` the column and ``y`` the row;
grids are numpy arrays indexed ``[y, x]``. Metric coordinates put the centre
of cell ``(x, y)`` at ``((x + 0.5) * cell_size, (y + 0.5) * cell_size)``.
Headings are integer degrees in ``[0, 360)``, 0 along +x, counter-clockwise
positive.
"""

import functools
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import config
from .errors import InvalidPlacement, MalformedEpisode, MalformedScene
from .utils import stable_seed

log = logging.getLogger(__name__)

Cell = tuple[int, int]

ACTIONS = ("move_forward", "turn_left", "turn_right", "look_up", "look_down", "stop")
RELATIONS = ("near", "between", "left_of", "right_of", "in_front_of", "behind")

# bearing quadrants measured from the reference object to the target
_QUADRANTS = {
    "right_of": 0.0,
    "in_front_of": 90.0,
    "left_of": 180.0,
    "behind": 270.0,
}


# ── Embeddings ────────────────────────────────────────────────────

def _group_of(token: str):
    for group, members in config.TOKEN_GROUPS.items():
        if token in members:
            return group
    return None


@functools.lru_cache(maxsize=4096)
def _token_vector(token: str, dim: int) -> tuple:
    rng = np.random.default_rng(stable_seed("token", token))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    group = _group_of(token)
    if group is not None:
        g = np.random.default_rng(stable_seed("group", group)).standard_normal(dim)
        v = v + config.GROUP_WEIGHT * g / np.linalg.norm(g)
    return tuple(v / np.linalg.norm(v))


def token_embedding(token: str, dim: int = config.EMBEDDING_DIM) -> np.ndarray:
    """Seeded unit vector for a vocabulary token.

    Tokens of one group in ``config.TOKEN_GROUPS`` share a component, so
    related categories (chair and table) sit closer than unrelated ones.
    """
    return np.array(_token_vector(token, dim))


def phrase_embedding(category: str, attributes=(), dim: int = config.EMBEDDING_DIM) -> np.ndarray:
    """Unit embedding of ``attributes + category`` (the text side of the similarity)."""
    v = token_embedding(category, dim)
    for attr in attributes:
        v = v + config.ATTRIBUTE_WEIGHT * token_embedding(attr, dim)
    return v / np.linalg.norm(v)


def instance_embedding(category: str, attributes, embedding_seed: int,
                       dim: int = config.EMBEDDING_DIM) -> np.ndarray:
    """Ground-truth embedding of one object instance."""
    rng = np.random.default_rng(stable_seed("instance", embedding_seed))
    noise = rng.standard_normal(dim)
    noise /= np.linalg.norm(noise)
    v = phrase_embedding(category, attributes, dim) + config.INSTANCE_NOISE * noise
    return v / np.linalg.norm(v)


# ── Domain types ──────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SceneObject:
    id: int
    category: str
    attributes: tuple[str, ...]
    footprint: frozenset
    centroid: tuple[float, float]
    true_embedding: np.ndarray


@dataclass(frozen=True, eq=False)
class GridScene:
    width: int
    height: int
    cell_size: float
    occupancy: np.ndarray          # bool [y, x], True = obstacle
    objects: tuple[SceneObject, ...]
    name: str = ""

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell[1], cell[0]]

    def cell_of(self, x: float, y: float) -> Cell:
        return (math.floor(x / self.cell_size), math.floor(y / self.cell_size))

    def cell_center(self, cell: Cell) -> tuple[float, float]:
        return ((cell[0] + 0.5) * self.cell_size, (cell[1] + 0.5) * self.cell_size)

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(object_id)

    @property
    def categories(self) -> set[str]:
        return {obj.category for obj in self.objects}

    @property
    def vocabulary(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        """(categories, attributes) tokens appearing in the scene, sorted."""
        attrs = {a for obj in self.objects for a in obj.attributes}
        return tuple(sorted(self.categories)), tuple(sorted(attrs))


@dataclass(frozen=True)
class Relation:
    kind: str
    categories: tuple[str, ...]


@dataclass(frozen=True)
class Goal:
    category: str
    attributes: tuple[str, ...] = ()


@dataclass(frozen=True)
class Query:
    raw_text: str
    main_goal: Goal
    relations: tuple[Relation, ...] = ()
    goal_object_ids: frozenset = frozenset()

    @property
    def key(self) -> str:
        return self.raw_text

    def embedding(self, dim: int = config.EMBEDDING_DIM) -> np.ndarray:
        return phrase_embedding(self.main_goal.category, self.main_goal.attributes, dim)


@dataclass(frozen=True)
class AgentPose:
    x: float
    y: float
    heading: int = 0


@dataclass(frozen=True, eq=False)
class SensorNoise:
    """Per-view descriptor noise: rotation angle std grows linearly with distance."""

    angle_per_m: float = config.NOISE_ANGLE_PER_M
    seed: int = 0

    def __post_init__(self):
        if self.angle_per_m < 0:
            raise ValueError("angle_per_m must be >= 0")


@dataclass(frozen=True, eq=False)
class Detection:
    object_id: int                 # ground truth, hidden from the policy
    descriptor: np.ndarray
    visible_footprint: frozenset
    distance: float


@dataclass(frozen=True, eq=False)
class Observation:
    pose: AgentPose
    visible_cells: frozenset
    obstacle_cells: frozenset
    detections: tuple[Detection, ...]
    view_index: int = 0


@dataclass(frozen=True, eq=False)
class Episode:
    episode_id: str
    scene: GridScene
    query: Query
    start_pose: AgentPose
    success_radius: float = config.SUCCESS_RADIUS
    max_steps: int = config.MAX_STEPS
    extra: dict = field(default_factory=dict)


# ── Scene / episode loading ───────────────────────────────────────

def _cells(raw, what: str) -> list[Cell]:
    try:
        return [(int(c[0]), int(c[1])) for c in raw]
    except (TypeError, ValueError, IndexError) as exc:
        raise MalformedScene(f"{what}: expected a list of [x, y] pairs") from exc


def scene_from_dict(doc: dict, name: str = "", dim: int = config.EMBEDDING_DIM) -> GridScene:
    """Build and validate a scene from its JSON document."""
    if not isinstance(doc, dict):
        raise MalformedScene("scene document must be an object")
    try:
        width = int(doc["width"])
        height = int(doc["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedScene("scene needs integer width and height") from exc
    if width <= 0 or height <= 0:
        raise MalformedScene(f"bad grid size {width}x{height}")
    cell_size = float(doc.get("cell_size", config.CELL_SIZE))
    if cell_size <= 0:
        raise MalformedScene("cell_size must be positive")

    occupancy = np.zeros((height, width), dtype=bool)
    for x, y in _cells(doc.get("obstacles", []), "obstacles"):
        if not (0 <= x < width and 0 <= y < height):
            raise MalformedScene(f"obstacle {(x, y)} out of bounds")
        occupancy[y, x] = True
    occupancy.setflags(write=False)

    objects = []
    seen_ids = set()
    for raw in doc.get("objects", []):
        try:
            oid = int(raw["id"])
            category = str(raw["category"])
            attributes = tuple(str(a) for a in raw.get("attributes", []))
            footprint = _cells(raw["footprint"], f"object {raw.get('id')} footprint")
            embedding_seed = int(raw.get("embedding_seed", oid))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedScene(f"malformed object entry: {raw!r}") from exc
        if oid in seen_ids:
            raise MalformedScene(f"duplicate object id {oid}")
        if not footprint:
            raise MalformedScene(f"object {oid} has an empty footprint")
        for x, y in footprint:
            if not (0 <= x < width and 0 <= y < height) or occupancy[y, x]:
                raise InvalidPlacement(oid, (x, y))
        seen_ids.add(oid)
        cx = float(np.mean([(x + 0.5) * cell_size for x, _ in footprint]))
        cy = float(np.mean([(y + 0.5) * cell_size for _, y in footprint]))
        objects.append(SceneObject(
            id=oid,
            category=category,
            attributes=attributes,
            footprint=frozenset(footprint),
            centroid=(cx, cy),
            true_embedding=instance_embedding(category, attributes, embedding_seed, dim),
        ))

    return GridScene(width, height, cell_size, occupancy, tuple(objects), name)


def load_scene(path: str) -> GridScene:
    """Load and validate a scene JSON file."""
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise MalformedScene(f"{path}: {exc}") from exc
    scene = scene_from_dict(doc, name=os.path.splitext(os.path.basename(path))[0])
    log.debug("Loaded scene %s (%dx%d, %d objects)", scene.name, scene.width,
              scene.height, len(scene.objects))
    return scene


def load_demo_scene(name: str) -> GridScene:
    """Load a scene bundled with the package (e.g. ``office_small``)."""
    path = os.path.join(config.DATA_DIR, f"{name}.json")
    if not os.path.exists(path):
        raise MalformedScene(f"unknown demo scene {name!r}")
    return load_scene(path)


def _parse_relation(raw) -> Relation:
    if isinstance(raw, dict):
        kind, cats = raw.get("relation"), raw.get("categories")
    else:
        try:
            kind, cats = raw[0], raw[1]
        except (TypeError, IndexError) as exc:
            raise MalformedEpisode(f"malformed relation {raw!r}") from exc
    if isinstance(cats, str):
        cats = [cats]
    if kind not in RELATIONS:
        raise MalformedEpisode(f"unknown relation {kind!r}")
    cats = tuple(str(c) for c in (cats or ()))
    expected = 2 if kind == "between" else 1
    if len(cats) != expected:
        raise MalformedEpisode(f"relation {kind} needs {expected} reference categories")
    return Relation(kind, cats)


def query_from_dict(doc: dict) -> Query:
    try:
        goal = doc["main_goal"]
        main_goal = Goal(str(goal["category"]), tuple(str(a) for a in goal.get("attributes", [])))
    except (KeyError, TypeError) as exc:
        raise MalformedEpisode("query needs main_goal.category") from exc
    relations = tuple(_parse_relation(r) for r in doc.get("relations", []))
    goal_ids = frozenset(int(i) for i in doc.get("goal_object_ids", []))
    return Query(str(doc.get("raw_text", main_goal.category)), main_goal, relations, goal_ids)


def episode_from_dict(doc: dict, scene: GridScene, episode_id: str = "") -> Episode:
    """Build and validate an episode against its scene."""
    try:
        start = doc["start"]
        pose = AgentPose(float(start["x"]), float(start["y"]), int(start.get("heading", 0)) % 360)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedEpisode("episode needs start {x, y, heading}") from exc
    if not scene.is_free(scene.cell_of(pose.x, pose.y)):
        raise MalformedEpisode(f"start pose {pose} is not on a free cell")

    query = query_from_dict(doc.get("query", {}))
    if not query.goal_object_ids:
        raise MalformedEpisode("goal_object_ids must be non-empty")
    known = {o.id for o in scene.objects}
    missing = query.goal_object_ids - known
    if missing:
        raise MalformedEpisode(f"unknown goal object ids {sorted(missing)}")
    categories = scene.categories
    for rel in query.relations:
        for cat in rel.categories:
            if cat not in categories:
                raise MalformedEpisode(f"relation {rel.kind} references absent category {cat!r}")

    return Episode(
        episode_id=str(doc.get("episode_id", episode_id)),
        scene=scene,
        query=query,
        start_pose=pose,
        success_radius=float(doc.get("success_radius", config.SUCCESS_RADIUS)),
        max_steps=int(doc.get("max_steps", config.MAX_STEPS)),
    )


def load_episode(path: str) -> Episode:
    """Load an episode JSON file and the scene it references."""
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise MalformedEpisode(f"{path}: {exc}") from exc
    scene_ref = doc.get("scene")
    if not scene_ref:
        raise MalformedEpisode(f"{path}: missing scene reference")
    scene_path = os.path.join(os.path.dirname(os.path.abspath(path)), scene_ref)
    if os.path.exists(scene_path):
        scene = load_scene(scene_path)
    else:
        scene = load_demo_scene(os.path.splitext(scene_ref)[0])
    default_id = os.path.splitext(os.path.basename(path))[0]
    return episode_from_dict(doc, scene, episode_id=default_id)


# ── Kinematics ────────────────────────────────────────────────────

def step(scene: GridScene, pose: AgentPose, action: str) -> AgentPose:
    """Apply one discrete action. Collisions leave the pose unchanged."""
    if action == "turn_left":
        return replace(pose, heading=(pose.heading + config.TURN_DEG) % 360)
    if action == "turn_right":
        return replace(pose, heading=(pose.heading - config.TURN_DEG) % 360)
    if action == "move_forward":
        rad = math.radians(pose.heading)
        nx = round(pose.x + config.FORWARD_STEP * math.cos(rad), 9)
        ny = round(pose.y + config.FORWARD_STEP * math.sin(rad), 9)
        if scene.is_free(scene.cell_of(nx, ny)):
            return AgentPose(nx, ny, pose.heading)
        return pose
    if action in ACTIONS:
        # look_up / look_down / stop: no pitch in a 2D world
        return pose
    raise ValueError(f"unknown action {action!r}")


# ── Sensor ────────────────────────────────────────────────────────

def _visible(scene: GridScene, pose: AgentPose, fov: float, sensor_range: float):
    cs = scene.cell_size
    ax, ay = pose.x, pose.y
    acx, acy = scene.cell_of(ax, ay)
    reach = int(math.ceil(sensor_range / cs)) + 1
    xs = np.arange(max(0, acx - reach), min(scene.width, acx + reach + 1))
    ys = np.arange(max(0, acy - reach), min(scene.height, acy + reach + 1))
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    dx = (gx + 0.5) * cs - ax
    dy = (gy + 0.5) * cs - ay
    dist = np.hypot(dx, dy)
    keep = dist <= sensor_range + 1e-9
    if fov < 360.0:
        ang = np.degrees(np.arctan2(dy, dx))
        diff = (ang - pose.heading + 180.0) % 360.0 - 180.0
        keep &= np.abs(diff) <= fov / 2.0 + 1e-9
    keep &= ~((gx == acx) & (gy == acy))
    gx, gy, dx, dy, dist = gx[keep], gy[keep], dx[keep], dy[keep], dist[keep]

    # sample every segment at no more than a quarter cell
    n_samples = max(2, int(math.ceil(sensor_range / (cs / 4.0))))
    t = np.linspace(0.0, 1.0, n_samples, endpoint=False)
    px = ax + dx[:, None] * t[None, :]
    py = ay + dy[:, None] * t[None, :]
    sx = np.floor(px / cs).astype(int)
    sy = np.floor(py / cs).astype(int)
    target = (sx == gx[:, None]) & (sy == gy[:, None])
    blocked = scene.occupancy[sy, sx] & ~target
    clear = ~blocked.any(axis=1)

    visible = {(acx, acy)}
    visible.update(zip(gx[clear].tolist(), gy[clear].tolist()))
    obstacles = {c for c in visible if scene.occupancy[c[1], c[0]]}
    return frozenset(visible), frozenset(obstacles)


def _view_descriptor(obj: SceneObject, distance: float, noise: SensorNoise,
                     pose: AgentPose, view_index: int) -> np.ndarray:
    if noise is None or noise.angle_per_m == 0:
        return obj.true_embedding.copy()
    rng = np.random.default_rng([
        noise.seed, view_index, obj.id,
        int(round(pose.x * 1000)), int(round(pose.y * 1000)), pose.heading,
    ])
    theta = noise.angle_per_m * distance * rng.standard_normal()
    e = obj.true_embedding
    u = rng.standard_normal(e.shape[0])
    u -= (u @ e) * e
    u /= np.linalg.norm(u)
    v = math.cos(theta) * e + math.sin(theta) * u
    return v / np.linalg.norm(v)


def observe(scene: GridScene, pose: AgentPose, fov: float = config.FOV_DEG,
            sensor_range: float = config.SENSOR_RANGE, noise: SensorNoise = None,
            view_index: int = 0) -> Observation:
    """Ray-cast the field of view and report detections of visible objects."""
    visible, obstacles = _visible(scene, pose, fov, sensor_range)
    detections = []
    for obj in scene.objects:
        seen = obj.footprint & visible
        if not seen:
            continue
        cx = float(np.mean([scene.cell_center(c)[0] for c in seen]))
        cy = float(np.mean([scene.cell_center(c)[1] for c in seen]))
        distance = math.hypot(cx - pose.x, cy - pose.y)
        detections.append(Detection(
            object_id=obj.id,
            descriptor=_view_descriptor(obj, distance, noise, pose, view_index),
            visible_footprint=frozenset(seen),
            distance=distance,
        ))
    return Observation(pose, visible, obstacles, tuple(detections), view_index)


# ── Success / ground truth ────────────────────────────────────────

def distance_to_goal(pose: AgentPose, scene: GridScene, goal_ids) -> float:
    """Euclidean distance to the nearest goal centroid (inf without goals)."""
    best = math.inf
    for oid in goal_ids:
        cx, cy = scene.object_by_id(oid).centroid
        best = min(best, math.hypot(pose.x - cx, pose.y - cy))
    return best


def check_success(pose: AgentPose, episode: Episode) -> bool:
    d = distance_to_goal(pose, episode.scene, episode.query.goal_object_ids)
    return d <= episode.success_radius + 1e-12


def _bearing(src: tuple[float, float], dst: tuple[float, float]) -> float:
    return math.degrees(math.atan2(dst[1] - src[1], dst[0] - src[0])) % 360.0


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _near_segment(p, a, b, tol: float) -> bool:
    ab = (b[0] - a[0], b[1] - a[1])
    length2 = ab[0] ** 2 + ab[1] ** 2
    if length2 == 0:
        return _dist(p, a) <= tol
    t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / length2
    if t < 0.0 or t > 1.0:
        return False
    foot = (a[0] + t * ab[0], a[1] + t * ab[1])
    return _dist(p, foot) <= tol


def relation_holds(scene: GridScene, obj: SceneObject, relation: Relation) -> bool:
    """Ground-truth relation semantics (reference objects exclude ``obj`` itself)."""
    refs = [[o for o in scene.objects if o.category == cat and o.id != obj.id]
            for cat in relation.categories]
    p = obj.centroid
    if relation.kind == "near":
        return any(_dist(p, r.centroid) <= config.NEAR_M for r in refs[0])
    if relation.kind == "between":
        return any(
            _near_segment(p, a.centroid, b.centroid, config.BETWEEN_M)
            for a in refs[0] for b in refs[1] if a.id != b.id
        )
    center = _QUADRANTS[relation.kind]
    for r in refs[0]:
        if _dist(p, r.centroid) > config.DIRECTIONAL_RANGE_M:
            continue
        diff = (_bearing(r.centroid, p) - center + 180.0) % 360.0 - 180.0
        if -45.0 < diff <= 45.0:
            return True
    return False


def match_score(scene: GridScene, obj: SceneObject, query: Query) -> float:
    """1.0 for a full match, otherwise half the fraction of satisfied constraints."""
    goal = query.main_goal
    if obj.category != goal.category:
        return 0.0
    checks = [True]
    checks += [a in obj.attributes for a in goal.attributes]
    checks += [relation_holds(scene, obj, r) for r in query.relations]
    if all(checks):
        return 1.0
    return 0.5 * sum(checks) / len(checks)


def goal_objects(scene: GridScene, query: Query) -> frozenset:
    """Ids of every object that fully satisfies the query."""
    return frozenset(o.id for o in scene.objects if match_score(scene, o, query) == 1.0)
