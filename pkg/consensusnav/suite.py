"""Procedural episode suite: four-room open plans with relation queries and distractors.

Rooms take fixed roles per episode: the target room (reference table,
target and more furniture), the start room, one room holding every
distractor and a spare room. The start never sees an object of the
target category before it moves.
"""

import json
import logging
import math
import os

import numpy as np

from . import config
from .errors import ConfigError
from .planning import geodesic_distance
from .utils import stable_seed
from .world import (
    AgentPose,
    Episode,
    episode_from_dict,
    goal_objects,
    observe,
    query_from_dict,
    scene_from_dict,
)

log = logging.getLogger(__name__)

WIDTH = 40
HEIGHT = 32
DOOR = 8                       # doorway width in cells
FOOTPRINT = 2                  # objects are FOOTPRINT x FOOTPRINT cells
MIN_START_DISTANCE_M = 3.0
MAX_ATTEMPTS = 200

TARGET_CATEGORIES = ("chair", "sofa")
REFERENCE_CATEGORY = "table"
HOME_FURNITURE = ("desk", "shelf")
ATTRIBUTES = ("red", "blue", "green", "white", "black", "wooden")
ROOM_THEMES = {
    "kitchen": ("fridge", "sink", "oven", "microwave"),
    "bathroom": ("toilet", "bathtub", "towel"),
    "bedroom": ("bed", "wardrobe", "lamp"),
}
RELATION_PHRASES = {
    "near": "near",
    "left_of": "to the left of",
    "right_of": "to the right of",
    "in_front_of": "in front of",
    "behind": "behind",
}

# (x0, x1, y0, y1) inclusive room interiors
ROOMS = (
    (1, 19, 1, 15),
    (21, 38, 1, 15),
    (1, 19, 17, 30),
    (21, 38, 17, 30),
)


def _walls(rng) -> set:
    cells = set()
    for x in range(WIDTH):
        cells.update({(x, 0), (x, HEIGHT - 1)})
    for y in range(HEIGHT):
        cells.update({(0, y), (WIDTH - 1, y)})

    gap = int(rng.integers(3, HEIGHT - DOOR - 3))
    cells.update((20, y) for y in range(1, HEIGHT - 1) if not gap <= y < gap + DOOR)
    left_gap = int(rng.integers(3, 20 - DOOR - 1))
    right_gap = int(rng.integers(22, WIDTH - DOOR - 2))
    for x in range(1, WIDTH - 1):
        if x == 20 or left_gap <= x < left_gap + DOOR or right_gap <= x < right_gap + DOOR:
            continue
        cells.add((x, 16))
    return cells


def _place(rng, room, taken: set, walls: set):
    """Random FOOTPRINT-square footprint inside ``room`` clear of walls and objects."""
    x0, x1, y0, y1 = room
    for _ in range(MAX_ATTEMPTS):
        x = int(rng.integers(x0 + 1, x1 - FOOTPRINT + 1))
        y = int(rng.integers(y0 + 1, y1 - FOOTPRINT + 1))
        cells = {(x + dx, y + dy) for dx in range(FOOTPRINT) for dy in range(FOOTPRINT)}
        halo = {(cx + dx, cy + dy) for cx, cy in cells for dx in (-1, 0, 1) for dy in (-1, 0, 1)}
        if halo & (taken | walls):
            continue
        return sorted(cells)
    return None


def _object(oid: int, category: str, attributes, footprint, seed: int) -> dict:
    return {
        "id": oid,
        "category": category,
        "attributes": list(attributes),
        "footprint": [list(c) for c in footprint],
        "embedding_seed": seed,
    }


def _hidden_from(scene, cell, category: str) -> bool:
    """No object of ``category`` is in line of sight from ``cell`` at any heading."""
    cx, cy = scene.cell_center(cell)
    obs = observe(scene, AgentPose(cx, cy, 0), fov=360.0)
    return all(scene.object_by_id(d.object_id).category != category for d in obs.detections)


def _attempt(rng, index: int, distractors: int):
    walls = _walls(rng)
    home, start_room, decoy_room, spare = (ROOMS[r] for r in rng.permutation(len(ROOMS)))
    themes = list(rng.permutation(sorted(ROOM_THEMES)))

    category = TARGET_CATEGORIES[int(rng.integers(len(TARGET_CATEGORIES)))]
    attribute = ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]
    relation = sorted(RELATION_PHRASES)[int(rng.integers(len(RELATION_PHRASES)))]

    objects, taken = [], set()

    def add(cat, attrs, room):
        fp = _place(rng, room, taken, walls)
        if fp is None:
            return None
        taken.update(fp)
        oid = len(objects) + 1
        objects.append(_object(oid, cat, attrs, fp, int(rng.integers(1 << 30))))
        return oid

    if add(REFERENCE_CATEGORY, [ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]], home) is None:
        return None
    target_id = add(category, [attribute], home)
    if target_id is None:
        return None
    for extra in HOME_FURNITURE:
        add(extra, [ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]], home)
    for _ in range(distractors):
        if add(category, [attribute], decoy_room) is None:
            return None
    for room, theme in zip((start_room, decoy_room, spare), themes):
        for cat in rng.choice(ROOM_THEMES[theme], size=2, replace=False):
            add(str(cat), [ATTRIBUTES[int(rng.integers(len(ATTRIBUTES)))]], room)

    scene_doc = {
        "width": WIDTH,
        "height": HEIGHT,
        "cell_size": config.CELL_SIZE,
        "obstacles": [list(c) for c in sorted(walls)],
        "objects": objects,
    }
    scene = scene_from_dict(scene_doc, name=f"scene_{index:03d}")
    query_doc = {
        "raw_text": f"the {attribute} {category} {RELATION_PHRASES[relation]} the {REFERENCE_CATEGORY}",
        "main_goal": {"category": category, "attributes": [attribute]},
        "relations": [{"relation": relation, "categories": [REFERENCE_CATEGORY]}],
    }
    goals = goal_objects(scene, query_from_dict(query_doc))
    if goals != {target_id}:
        return None
    query_doc["goal_object_ids"] = sorted(goals)

    target = scene.object_by_id(target_id)
    x0, x1, y0, y1 = start_room
    free = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)
            if not scene.occupancy[y, x] and (x, y) not in taken]
    for _ in range(MAX_ATTEMPTS):
        sx, sy = free[int(rng.integers(len(free)))]
        cx, cy = scene.cell_center((sx, sy))
        if math.hypot(cx - target.centroid[0], cy - target.centroid[1]) < MIN_START_DISTANCE_M:
            continue
        if not _hidden_from(scene, (sx, sy), category):
            continue
        if not math.isfinite(geodesic_distance(scene.occupancy, (sx, sy), target.footprint)):
            continue
        break
    else:
        return None

    episode_doc = {
        "episode_id": f"ep{index:03d}",
        "scene": f"scene_{index:03d}.json",
        "start": {"x": cx, "y": cy, "heading": int(rng.integers(12)) * config.TURN_DEG},
        "query": query_doc,
        "success_radius": config.SUCCESS_RADIUS,
        "max_steps": config.MAX_STEPS,
    }
    return scene_doc, episode_doc


def generate_suite(n: int, seed: int = 0, distractors=(2, 3)) -> list[tuple[dict, dict]]:
    """``n`` (scene document, episode document) pairs; episode ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ConfigError("suite needs at least one episode")
    lo, hi = distractors if isinstance(distractors, (list, tuple)) else (distractors, distractors)
    pairs = []
    for index in range(n):
        rng = np.random.default_rng(stable_seed("suite", seed, index))
        for _ in range(MAX_ATTEMPTS):
            k = int(rng.integers(lo, hi + 1))
            made = _attempt(rng, index, k)
            if made is not None:
                pairs.append(made)
                break
        else:
            raise ConfigError(f"could not generate suite episode {index}")
    log.info("Generated %d suite episodes (seed %d)", n, seed)
    return pairs


def suite_episodes(n: int, seed: int = 0, distractors=(2, 3)) -> list[Episode]:
    episodes = []
    for scene_doc, episode_doc in generate_suite(n, seed, distractors):
        scene = scene_from_dict(scene_doc, name=os.path.splitext(episode_doc["scene"])[0])
        episodes.append(episode_from_dict(episode_doc, scene))
    return episodes


def write_suite(out_dir: str, n: int, seed: int = 0, distractors=(2, 3)) -> list[str]:
    """Write scenes and episodes as JSON files; returns the episode paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for scene_doc, episode_doc in generate_suite(n, seed, distractors):
        with open(os.path.join(out_dir, episode_doc["scene"]), "w") as f:
            json.dump(scene_doc, f, indent=1)
        path = os.path.join(out_dir, f"{episode_doc['episode_id']}.json")
        with open(path, "w") as f:
            json.dump(episode_doc, f, indent=2)
        paths.append(path)
    return paths
