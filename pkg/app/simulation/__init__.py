"""Planar tabletop world with colored blocks, three fixed targets and a scripted expert.

All state transitions are pure: every call returns a new WorldState.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from app.models.vocab import ActionVector
from app.models.world import ObjectState, TargetState, TaskSpec, WorldState
from app.utils.base import ConfigError, ObjectColor, TargetKind
from app.utils.common import make_rng

TABLE_LO = np.array([0.0, 0.0, 0.0])
TABLE_HI = np.array([1.0, 1.0, 0.5])
POS_CLIP = 0.08
ROT_CLIP = 0.3
GRASP_RADIUS = 0.05
PLACE_HEIGHT = 0.1
MIN_SEPARATION = 0.15

OBJECT_Z = 0.02
SPAWN_LO = np.array([0.1, 0.1])
SPAWN_HI = np.array([0.9, 0.55])
TARGET_RADIUS = 0.08
TARGET_POSITIONS = {
    TargetKind.PLATE: (0.2, 0.8, 0.0),
    TargetKind.BOWL: (0.5, 0.8, 0.0),
    TargetKind.BOX: (0.8, 0.8, 0.0),
}

HOVER_OFFSET = 0.15
CARRY_Z = 0.2
RELEASE_Z = 0.05
TOLERANCE = 1e-4
DEFAULT_HORIZON = 60

N_OBJECTS = len(ObjectColor)
TASKS: tuple[TaskSpec, ...] = tuple(
    TaskSpec(task_id=color * len(TargetKind) + target, object_ref=color, target_ref=target)
    for color in range(N_OBJECTS)
    for target in range(len(TargetKind))
)
OBS_DIM = 3 + 1 + N_OBJECTS * (3 + 1) + len(TASKS)


def task_by_id(task_id: int) -> TaskSpec:
    if not 0 <= task_id < len(TASKS):
        raise ConfigError(f"unknown task id {task_id}; known ids are 0..{len(TASKS) - 1}")
    return TASKS[task_id]


def task_id_for(color: ObjectColor, target: TargetKind) -> int:
    return list(ObjectColor).index(color) * len(TargetKind) + list(TargetKind).index(target)


def task_words() -> list[tuple[str, ...]]:
    """Instruction words per task id, in prompt order."""
    return [task.words for task in TASKS]


def _targets() -> tuple[TargetState, ...]:
    return tuple(
        TargetState(target_id=i, kind=kind, pos=TARGET_POSITIONS[kind], radius=TARGET_RADIUS)
        for i, kind in enumerate(TargetKind)
    )


def _spawn_objects(rng: np.random.Generator, targets: Sequence[TargetState]) -> tuple[ObjectState, ...]:
    placed: list[np.ndarray] = [np.array(t.pos[:2]) for t in targets]
    objects = []
    for slot in range(N_OBJECTS):
        while True:
            xy = rng.uniform(SPAWN_LO, SPAWN_HI)
            if all(np.linalg.norm(xy - other) >= MIN_SEPARATION for other in placed):
                break
        placed.append(xy)
        objects.append(ObjectState(object_id=slot, color_id=slot, pos=(float(xy[0]), float(xy[1]), OBJECT_Z)))
    return tuple(objects)


def observation(state: WorldState) -> np.ndarray:
    """[gripper xyz, open flag, per object (xyz, held flag), task one-hot]."""
    parts = [np.asarray(state.gripper_pos), [float(state.gripper_open)]]
    for obj in state.objects:
        parts.append(np.asarray(obj.pos))
        parts.append([float(obj.held)])
    one_hot = np.zeros(len(TASKS))
    one_hot[state.task_id] = 1.0
    parts.append(one_hot)
    return np.concatenate(parts).astype(np.float64)


def reset(seed: int, task_distribution: Optional[Sequence[int]] = None, task_id: Optional[int] = None) -> tuple[WorldState, TaskSpec, np.ndarray]:
    """Sample a scene and a task; objects keep pairwise (and target) separation of at least 0.15."""
    rng = make_rng(seed, "reset")
    choices = list(task_distribution) if task_distribution else list(range(len(TASKS)))
    drawn = int(choices[rng.integers(len(choices))])
    task = task_by_id(drawn if task_id is None else task_id)
    targets = _targets()
    objects = _spawn_objects(rng, targets)
    start = rng.uniform([0.1, 0.1, 0.15], [0.9, 0.9, 0.35])
    state = WorldState(
        gripper_pos=tuple(float(v) for v in start),
        gripper_open=True,
        objects=objects,
        targets=targets,
        task_id=task.task_id,
    )
    return state, task, observation(state)


def with_task(state: WorldState, task: TaskSpec) -> tuple[WorldState, np.ndarray]:
    """Switch the active task without touching the scene (used between chained links)."""
    switched = state.model_copy(update={"task_id": task.task_id})
    return switched, observation(switched)


def clip_action(action: ActionVector | np.ndarray) -> np.ndarray:
    values = action.as_array() if isinstance(action, ActionVector) else np.asarray(action, dtype=np.float64).copy()
    values[:3] = np.clip(values[:3], -POS_CLIP, POS_CLIP)
    values[3:6] = np.clip(values[3:6], -ROT_CLIP, ROT_CLIP)
    values[6] = min(1.0, max(0.0, values[6]))
    return values


def step(state: WorldState, action: ActionVector | np.ndarray) -> tuple[WorldState, np.ndarray]:
    """Apply one clipped delta action. The gripper channel is absolute: open iff >= 0.5."""
    values = clip_action(action)
    pos = np.clip(np.asarray(state.gripper_pos) + values[:3], TABLE_LO, TABLE_HI)
    gripper_pos = tuple(float(v) for v in pos)
    yaw = math.remainder(state.yaw + values[5], 2 * math.pi)
    want_open = values[6] >= 0.5

    objects = list(state.objects)
    held = state.held_object()
    if held is not None:
        objects[held.object_id] = held.model_copy(update={"pos": gripper_pos})
    gripper_open = state.gripper_open
    if gripper_open and not want_open:
        gripper_open = False
        candidates = [(np.linalg.norm(np.asarray(o.pos) - pos), o.object_id) for o in objects]
        distance, nearest = min(candidates)
        if distance <= GRASP_RADIUS:
            objects[nearest] = objects[nearest].model_copy(update={"held": True, "pos": gripper_pos})
    elif not gripper_open and want_open:
        gripper_open = True
        if held is not None:
            objects[held.object_id] = objects[held.object_id].model_copy(update={"held": False})

    next_state = state.model_copy(update={
        "gripper_pos": gripper_pos,
        "gripper_open": gripper_open,
        "yaw": yaw,
        "objects": tuple(objects),
    })
    return next_state, observation(next_state)


def success(state: WorldState, task: TaskSpec) -> bool:
    """Task object inside the target's closed horizontal disc, low, released, gripper open."""
    obj = state.objects[task.object_ref]
    target = state.targets[task.target_ref]
    horizontal = math.hypot(obj.pos[0] - target.pos[0], obj.pos[1] - target.pos[1])
    return horizontal <= target.radius and obj.pos[2] < PLACE_HEIGHT and not obj.held and state.gripper_open


def zero_action(state: WorldState) -> ActionVector:
    """No motion, gripper channel matching the current gripper state."""
    return ActionVector(gripper=1.0 if state.gripper_open else 0.0)


def _move_towards(state: WorldState, goal: Sequence[float], gripper: float) -> ActionVector:
    delta = np.clip(np.asarray(goal) - np.asarray(state.gripper_pos), -POS_CLIP, POS_CLIP)
    return ActionVector(dpos=tuple(float(v) for v in delta), gripper=gripper)


def scripted_expert(state: WorldState, task: TaskSpec) -> ActionVector:
    """Phase machine read off the current state: approach, descend, close, lift, carry, descend, open."""
    obj = state.objects[task.object_ref]
    target = state.targets[task.target_ref]
    g = np.asarray(state.gripper_pos)

    if obj.held:
        over_target = math.hypot(g[0] - target.pos[0], g[1] - target.pos[1]) <= TOLERANCE
        if not over_target:
            if g[2] < CARRY_Z - TOLERANCE:
                return _move_towards(state, (g[0], g[1], CARRY_Z), 0.0)
            return _move_towards(state, (target.pos[0], target.pos[1], CARRY_Z), 0.0)
        if g[2] > RELEASE_Z + TOLERANCE:
            return _move_towards(state, (target.pos[0], target.pos[1], RELEASE_Z), 0.0)
        return ActionVector(gripper=1.0)

    if success(state, task):
        return zero_action(state)
    if not state.gripper_open:
        return ActionVector(gripper=1.0)
    above_object = math.hypot(g[0] - obj.pos[0], g[1] - obj.pos[1]) <= TOLERANCE
    if not above_object:
        return _move_towards(state, (obj.pos[0], obj.pos[1], obj.pos[2] + HOVER_OFFSET), 1.0)
    if g[2] - obj.pos[2] > TOLERANCE:
        return _move_towards(state, obj.pos, 1.0)
    return ActionVector(gripper=0.0)


def run_expert_episode(seed: int, task_distribution: Optional[Sequence[int]] = None, horizon: int = DEFAULT_HORIZON):
    """Closed-loop expert rollout; stops at success or the horizon.

    Returns (task, observations, actions, succeeded) with len(observations) == len(actions) + 1.
    """
    state, task, obs = reset(seed, task_distribution)
    observations, actions = [obs], []
    done = False
    for _ in range(horizon):
        action = scripted_expert(state, task)
        state, obs = step(state, action)
        observations.append(obs)
        actions.append(action.as_array())
        if success(state, task):
            done = True
            break
    return task, observations, actions, done
