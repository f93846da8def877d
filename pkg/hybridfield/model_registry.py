from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .model_interface import ModelFactory


@dataclass
class ModelRegistry:
    _factories: dict[str, type[ModelFactory]] = field(default_factory=dict)

    def register(self, factory: type[ModelFactory]) -> None:
        mid = str(getattr(factory, "model_id", "") or "").strip().lower()
        if not mid:
            raise ValueError("Model factory must expose a non-empty model_id")
        self._factories[mid] = factory

    def register_many(self, factories: Iterable[type[ModelFactory]]) -> None:
        for factory in factories:
            self.register(factory)

    def get(self, model_id: str) -> type[ModelFactory] | None:
        mid = str(model_id or "").strip().lower()
        return self._factories.get(mid)

    def ids(self) -> list[str]:
        return sorted(self._factories.keys())


def default_registry() -> ModelRegistry:
    from .models import DeformationFieldModel, HybridFieldModel, StaticFieldModel

    registry = ModelRegistry()
    registry.register_many([HybridFieldModel, StaticFieldModel, DeformationFieldModel])
    return registry
