"""
Configuration module for experiment settings and metric metadata.
"""
from .catalog import METRIC_CATALOG, MetricInfo, describe_metric
from .settings import (MAPPING_REGISTRY, METHOD_REGISTRY, Config,
                       MappingConfig, MethodConfig)

__all__ = [
    "Config",
    "MethodConfig",
    "MappingConfig",
    "METHOD_REGISTRY",
    "MAPPING_REGISTRY",
    "METRIC_CATALOG",
    "MetricInfo",
    "describe_metric",
]
