from __future__ import annotations

from pydantic import Field

from app.models.base import BaseRecord
from app.utils.base import ObjectColor, TargetKind

Vec3 = tuple[float, float, float]


class ObjectState(BaseRecord):
    """Embedded: a graspable block. Slot index equals color id."""
    object_id: int
    color_id: int
    pos: Vec3
    held: bool = False


class TargetState(BaseRecord):
    """Embedded: a fixed placement region."""
    target_id: int
    kind: TargetKind
    pos: Vec3
    radius: float


class WorldState(BaseRecord):
    """Planar tabletop state.

    Fields:
    - gripper_pos (x, y, z): table units, inside [0,1]×[0,1]×[0,0.5]
    - gripper_open (bool)
    - yaw (float): carried for the rotation channels, no effect on grasping
    - task_id (int): active task, encoded one-hot in the observation
    - objects/targets: scene contents; at most one object is held
    """
    gripper_pos: Vec3
    gripper_open: bool = True
    yaw: float = 0.0
    task_id: int = 0
    objects: tuple[ObjectState, ...]
    targets: tuple[TargetState, ...]

    def held_object(self) -> ObjectState | None:
        for obj in self.objects:
            if obj.held:
                return obj
        return None


class TaskSpec(BaseRecord):
    """A "put <object> on/in <target>" instruction."""
    task_id: int
    object_ref: int
    target_ref: int
    horizon_limit: int = 60

    @property
    def color(self) -> ObjectColor:
        return list(ObjectColor)[self.object_ref]

    @property
    def target_kind(self) -> TargetKind:
        return list(TargetKind)[self.target_ref]

    @property
    def template(self) -> str:
        preposition = "on" if self.target_kind is TargetKind.PLATE else "in"
        return f"put {self.color.value} block {preposition} {self.target_kind.value}"

    @property
    def words(self) -> tuple[str, str]:
        return self.color.value, self.target_kind.value


class EpisodeRecord(BaseRecord):
    """One expert demonstration; obs[i] is observed before actions[i]."""
    task_id: int
    seed: int
    obs: list[list[float]]
    actions: list[list[float]] = Field(default_factory=list)
    success: bool

    @property
    def length(self) -> int:
        return len(self.actions)


class ComponentStats(BaseRecord):
    min: float
    max: float
    p1: float
    p99: float


class DatasetSummary(BaseRecord):
    """Sidecar written next to a generated dataset."""
    n_requested: int
    n_episodes: int
    n_failed: int
    n_steps: int
    length_mean: float
    length_median: float
    action_stats: dict[str, ComponentStats]
    dataset_sha256: str = ""
    seed: int = 0
    config_hash: str = ""
    config: dict = Field(default_factory=dict)
