import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

from dotenv import load_dotenv

load_dotenv()


@dataclass
class MethodConfig:
    """Configuration for a Rashomon sampling method"""
    family: str
    smoke_budget: int
    full_budget: int
    description: str


# Registry of available sampling methods
METHOD_REGISTRY: Dict[str, MethodConfig] = {
    "feature_subsets": MethodConfig(
        family="scoring_system",
        smoke_budget=100,
        full_budget=1000,
        description="Sparse integer scoring systems over random feature subsets",
    ),
    "bootstrap": MethodConfig(
        family="mlp",
        smoke_budget=100,
        full_budget=1000,
        description="Networks trained on bootstrap resamples of the training split",
    ),
    "shuffle": MethodConfig(
        family="mlp",
        smoke_budget=100,
        full_budget=1000,
        description="Per-epoch snapshots of one network trained with shuffled data order",
    ),
    "perturbation": MethodConfig(
        family="mlp",
        smoke_budget=100,
        full_budget=1000,
        description="Base network perturbed towards individual validation points",
    ),
}


@dataclass
class MappingConfig:
    """Configuration for a prediction-to-allocation mapping"""
    kind: str
    k_fraction: float = 0.0
    n_fraction: float = 0.0
    v: float = 0.0


# Registry of available mappings
MAPPING_REGISTRY: Dict[str, MappingConfig] = {
    "top_k": MappingConfig(kind="top_k"),
    "boundary_0.25k_0.50k": MappingConfig(kind="boundary", k_fraction=0.25, n_fraction=0.50),
    "boundary_0.50k_1.00k": MappingConfig(kind="boundary", k_fraction=0.50, n_fraction=1.00),
    "sigmoid_logit_v2": MappingConfig(kind="sigmoid_logit", v=2.0),
    "sigmoid_logit_v5": MappingConfig(kind="sigmoid_logit", v=5.0),
}


class Config:
    """Centralized configuration management"""

    DEFAULT_OUTPUT_ROOT = "results"
    DEFAULT_LOG_LEVEL = "INFO"
    BUDGET_SCALES = ("smoke", "full")

    @staticmethod
    def get_method_names() -> list[str]:
        """Get list of available sampling method names"""
        return list(METHOD_REGISTRY.keys())

    @staticmethod
    def get_mapping_names() -> list[str]:
        """Get list of available mapping names"""
        return list(MAPPING_REGISTRY.keys())

    @staticmethod
    def get_budget(method: str, scale: str = "smoke") -> int:
        """Get the model budget of a method at a budget scale"""
        config = METHOD_REGISTRY.get(method)
        if not config:
            raise ValueError(f"Unknown method '{method}'. Available methods: {', '.join(METHOD_REGISTRY)}")
        if scale not in Config.BUDGET_SCALES:
            raise ValueError(f"Unknown budget scale '{scale}'. Available scales: {', '.join(Config.BUDGET_SCALES)}")
        return config.full_budget if scale == "full" else config.smoke_budget

    @staticmethod
    def get_output_root() -> Path:
        """Get the default root directory for result archives"""
        return Path(os.getenv("MULTIPLICITY_OUTPUT_ROOT", Config.DEFAULT_OUTPUT_ROOT))

    @staticmethod
    def get_log_level() -> str:
        """Get the default log level name"""
        return os.getenv("MULTIPLICITY_LOG_LEVEL", Config.DEFAULT_LOG_LEVEL).upper()

    @staticmethod
    def get_default_threads() -> int:
        """Get the default number of worker threads"""
        try:
            return max(1, int(os.getenv("MULTIPLICITY_THREADS", "1")))
        except ValueError:
            return 1
