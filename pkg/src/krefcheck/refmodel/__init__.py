"""Kernel API models: kref discovery, the model registry and rewrites."""
from .kref import addresses_kref, find_kref_types
from .registry import (
    ApiModel, BusFinder, DevresApi, DtApiKind, ModelError, ModelRegistry,
    RefOp, TokenApi, default_registry, dt_model_template, load_registry,
    model_bus_find,
)
from .rewrite import TOKEN_PTR, apply_devres, apply_models

__all__ = [
    "addresses_kref", "find_kref_types", "ApiModel", "BusFinder", "DevresApi",
    "DtApiKind", "ModelError", "ModelRegistry", "RefOp", "TokenApi",
    "default_registry", "dt_model_template", "load_registry", "model_bus_find",
    "TOKEN_PTR", "apply_devres", "apply_models",
]
