"""Token masking framework.

A sample is tokenized as: one token per input scalar, one per output
scalar, one per image patch, with contiguous indices in that order.  A
mask partitions the token indices into a visible set (fed to the encoder)
and a masked set (filled with mask tokens for the decoder).

Strategies are registered by name so new masking schemes can be added
without touching call sites; ``forward`` and ``random`` ship by default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

from .errors import DimensionError
from .seeding import rng


@dataclass(frozen=True)
class TokenLayout:
    """Token counts per modality; indices are assigned contiguously:
    inputs [0, n_input), output scalars [n_input, n_input + n_output),
    patches thereafter."""

    n_input: int
    n_output: int
    n_patch: int

    def __post_init__(self):
        if min(self.n_input, self.n_output, self.n_patch) < 0:
            raise DimensionError("token counts must be non-negative")
        if self.total < 1:
            raise DimensionError("layout must have at least one token")

    @property
    def total(self) -> int:
        return self.n_input + self.n_output + self.n_patch

    @property
    def n_scalar(self) -> int:
        return self.n_input + self.n_output

    def input_tokens(self) -> tuple[int, ...]:
        return tuple(range(self.n_input))

    def output_tokens(self) -> tuple[int, ...]:
        return tuple(range(self.n_input, self.n_scalar))

    def patch_tokens(self) -> tuple[int, ...]:
        return tuple(range(self.n_scalar, self.total))


@dataclass(frozen=True)
class TokenMask:
    """A partition of a layout's token indices into visible and masked sets.

    Both sets are kept sorted ascending so serialization is deterministic.
    """

    layout: TokenLayout
    visible: tuple[int, ...]
    masked: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "visible", tuple(sorted(self.visible)))
        object.__setattr__(self, "masked", tuple(sorted(self.masked)))
        universe = set(range(self.layout.total))
        vis, msk = set(self.visible), set(self.masked)
        if vis | msk != universe or vis & msk:
            raise DimensionError(
                "visible and masked sets must partition the token indices"
            )

    def to_json(self) -> str:
        return json.dumps({"visible": list(self.visible), "masked": list(self.masked)})

    @classmethod
    def from_json(cls, text: str, layout: TokenLayout) -> "TokenMask":
        obj = json.loads(text)
        return cls(layout, tuple(obj["visible"]), tuple(obj["masked"]))


def forward_mask(layout: TokenLayout) -> TokenMask:
    """Surrogate-prediction mask: inputs visible, all outputs masked."""
    return TokenMask(
        layout,
        visible=layout.input_tokens(),
        masked=layout.output_tokens() + layout.patch_tokens(),
    )


def random_mask(layout: TokenLayout, rate: float, seed: int) -> TokenMask:
    """Mask ``floor(rate * total)`` tokens chosen uniformly without
    replacement over all tokens (scalars and patches alike)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    n_masked = math.floor(rate * layout.total)
    order = rng(seed, "random_mask").permutation(layout.total)
    masked = tuple(int(i) for i in order[:n_masked])
    visible = tuple(int(i) for i in order[n_masked:])
    return TokenMask(layout, visible=visible, masked=masked)


def complement(mask: TokenMask) -> TokenMask:
    """Swap the visible and masked sets."""
    return TokenMask(mask.layout, visible=mask.masked, masked=mask.visible)


MaskStrategy = Callable[..., TokenMask]

_STRATEGIES: dict[str, MaskStrategy] = {}


def register_strategy(name: str, fn: MaskStrategy) -> None:
    if name in _STRATEGIES:
        raise ValueError(f"mask strategy {name!r} already registered")
    _STRATEGIES[name] = fn


def get_strategy(name: str) -> MaskStrategy:
    try:
        return _STRATEGIES[name]
    except KeyError:
        raise KeyError(
            f"unknown mask strategy {name!r}; known: {sorted(_STRATEGIES)}"
        ) from None


register_strategy("forward", forward_mask)
register_strategy("random", random_mask)
