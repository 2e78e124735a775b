from enum import Enum


class BaseEnum(Enum):
    @classmethod
    def choices(cls):
        return [(item.value, item.name) for item in cls]

    @classmethod
    def values(cls) -> list[str]:
        return [item.value for item in cls]


class HeadMode(BaseEnum):
    LOCALIZED = "localized"
    FULL_VOCAB = "full_vocab"


class LossWeighting(BaseEnum):
    INVERSE_T = "inverse_t"
    MASKED_MEAN = "masked_mean"


class ScheduleShape(BaseEnum):
    LINEAR = "linear"


class DecodeStrategy(BaseEnum):
    VANILLA = "vanilla"
    HIERARCHICAL = "hierarchical"


class Selection(BaseEnum):
    GREEDY = "greedy"
    SAMPLE = "sample"


class FocusMode(BaseEnum):
    CONSECUTIVE = "consecutive"
    REARGMAX = "re-argmax"


class ConfidenceMode(BaseEnum):
    PROBABILITY = "probability"
    LOGIT = "logit"


class ActionScoreMode(BaseEnum):
    MASKED_ONLY = "masked_only"
    ALL_TOKENS = "all_tokens"


class ChunkExecution(BaseEnum):
    FULL = "full"
    FIRST_M = "first_m"


class AblationSuite(BaseEnum):
    LSC = "lsc"
    HAD = "had"
    CHUNK = "chunk"


class TargetKind(BaseEnum):
    PLATE = "plate"
    BOWL = "bowl"
    BOX = "box"


class ObjectColor(BaseEnum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    YELLOW = "yellow"
