"""Lake-extraction prompt benchmark and a desk-scale two-stage prompt training reference."""
__version__ = "0.1.0"

from ._accel import BACKEND  # noqa: E402
from .backbone import LakeModel, ModelConfig  # noqa: E402
from .clustering import DbscanParams, dbscan  # noqa: E402
from .promptgen import PromptSet, build_benchmark, scene_prompts  # noqa: E402
from .raster_io import Scene, SynthConfig, gen_synthetic_dataset  # noqa: E402
from .trainer import Metrics, TrainConfig, compute_metrics, evaluate, train_two_stage  # noqa: E402

__all__ = [
    "BACKEND", "LakeModel", "ModelConfig", "DbscanParams", "dbscan", "PromptSet",
    "build_benchmark", "scene_prompts", "Scene", "SynthConfig", "gen_synthetic_dataset",
    "Metrics", "TrainConfig", "compute_metrics", "evaluate", "train_two_stage",
]
