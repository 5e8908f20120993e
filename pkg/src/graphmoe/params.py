"""Parameter containers and initialisation shared by the model modules."""

from __future__ import annotations

import dataclasses
import hashlib
from typing import Iterator

import numpy as np

from .autodiff import Tensor


def sub_seed(seed: int, name: str) -> int:
    """Derive a per-module seed by hashing ``name`` together with ``seed``."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def linear(rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True):
    w = uniform(rng, fan_in, (fan_in, fan_out))
    b = uniform(rng, fan_in, (fan_out,)) if bias else None
    return w, b


@dataclasses.dataclass
class ParamGroup:
    """Dataclass base whose Tensor (or nested group / list) fields are parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            key = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, ParamGroup):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        yield f"{key}.{i}", item
                    elif isinstance(item, ParamGroup):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]
