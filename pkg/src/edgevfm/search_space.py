"""NAS design space for the ConvNeXt-v2 vision backbone.

The space is four stages, each a downsample block followed by a stack of
ConvNeXt-v2 blocks. A :class:`SubnetConfig` picks one depth and one width per
stage; the downsample block of a stage inherits the width of the stage it
feeds.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .exceptions import ValidationError

DOWNSAMPLE = "downsample"
CONVNEXT_STAGE = "convnext_stage"
_ALLOWED_STRIDES = (1, 2, 4)
DEFAULT_ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class BlockSpec:
    name: str
    kind: str
    dim_min: int
    dim_max: int
    depth_min: int
    depth_max: int
    stride: int

    def __post_init__(self):
        if self.kind not in (DOWNSAMPLE, CONVNEXT_STAGE):
            raise ValidationError(f"{self.name}: unknown block kind {self.kind!r}")
        if not 0 < self.dim_min <= self.dim_max:
            raise ValidationError(f"{self.name}: need 0 < dim_min <= dim_max")
        if not 0 < self.depth_min <= self.depth_max:
            raise ValidationError(f"{self.name}: need 0 < depth_min <= depth_max")
        if self.stride not in _ALLOWED_STRIDES:
            raise ValidationError(f"{self.name}: stride must be one of {_ALLOWED_STRIDES}")
        if self.kind == DOWNSAMPLE and not self.depth_min == self.depth_max == 1:
            raise ValidationError(f"{self.name}: downsample blocks have depth 1")


@dataclass(frozen=True)
class SearchSpace:
    blocks: tuple[BlockSpec, ...]
    input_resolution: int = 224
    width_step: int = 24
    depth_step: int = 6

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if len(self.blocks) != 8:
            raise ValidationError("search space needs exactly 8 blocks (4 stages)")
        for i, block in enumerate(self.blocks):
            expected = DOWNSAMPLE if i % 2 == 0 else CONVNEXT_STAGE
            if block.kind != expected:
                raise ValidationError(
                    f"block {i} ({block.name}) must be a {expected} block, got {block.kind}"
                )
        if self.width_step <= 0 or self.depth_step <= 0:
            raise ValidationError("width_step and depth_step must be positive")

    @property
    def stages(self) -> tuple[BlockSpec, ...]:
        """The four ConvNeXt stage blocks, in order."""
        return self.blocks[1::2]

    @property
    def downsamples(self) -> tuple[BlockSpec, ...]:
        return self.blocks[0::2]

    @property
    def total_stride(self) -> int:
        return math.prod(b.stride for b in self.blocks)

    def width_choices(self, stage: int) -> list[int]:
        spec = self.stages[stage]
        return _grid(spec.dim_min, spec.dim_max, self.width_step)

    def depth_choices(self, stage: int) -> list[int]:
        spec = self.stages[stage]
        return _grid(spec.depth_min, spec.depth_max, self.depth_step)

    def min_config(self) -> SubnetConfig:
        return SubnetConfig(
            depths=tuple(s.depth_min for s in self.stages),
            dims=tuple(s.dim_min for s in self.stages),
        )

    def max_config(self) -> SubnetConfig:
        return SubnetConfig(
            depths=tuple(s.depth_max for s in self.stages),
            dims=tuple(s.dim_max for s in self.stages),
        )

    def to_dict(self) -> dict:
        return {
            "input_resolution": self.input_resolution,
            "width_step": self.width_step,
            "depth_step": self.depth_step,
            "blocks": [
                {
                    "name": b.name,
                    "kind": b.kind,
                    "dim_min": b.dim_min,
                    "dim_max": b.dim_max,
                    "depth_min": b.depth_min,
                    "depth_max": b.depth_max,
                    "stride": b.stride,
                }
                for b in self.blocks
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> SearchSpace:
        try:
            blocks = tuple(BlockSpec(**b) for b in doc["blocks"])
            return cls(
                blocks=blocks,
                input_resolution=int(doc.get("input_resolution", 224)),
                width_step=int(doc.get("width_step", 24)),
                depth_step=int(doc.get("depth_step", 6)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed search-space document: {exc}") from exc


def _grid(lo: int, hi: int, step: int) -> list[int]:
    values = list(range(lo, hi + 1, step))
    if values[-1] != hi:
        values.append(hi)
    return values


def _on_grid(value: int, lo: int, hi: int, step: int) -> bool:
    return value == hi or (value - lo) % step == 0


@dataclass(frozen=True, order=True)
class SubnetConfig:
    """One subnet: ConvNeXt depth and width for each of the four stages."""

    depths: tuple[int, ...]
    dims: tuple[int, ...]
    id: str = field(init=False, compare=False)

    def __post_init__(self):
        depths = tuple(int(d) for d in self.depths)
        dims = tuple(int(d) for d in self.dims)
        if len(depths) != 4 or len(dims) != 4:
            raise ValidationError("a subnet needs exactly 4 depths and 4 dims")
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(
            self,
            "id",
            "d" + "-".join(map(str, depths)) + "_c" + "-".join(map(str, dims)),
        )

    @classmethod
    def from_id(cls, subnet_id: str) -> SubnetConfig:
        try:
            d_part, c_part = subnet_id.strip().split("_")
            if not (d_part.startswith("d") and c_part.startswith("c")):
                raise ValueError
            depths = [int(x) for x in d_part[1:].split("-")]
            dims = [int(x) for x in c_part[1:].split("-")]
        except ValueError:
            raise ValidationError(f"not a canonical subnet id: {subnet_id!r}") from None
        return cls(depths=tuple(depths), dims=tuple(dims))

    @classmethod
    def from_dict(cls, doc: dict) -> SubnetConfig:
        try:
            return cls(depths=tuple(doc["depths"]), dims=tuple(doc["dims"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed subnet document: {exc}") from exc

    @classmethod
    def proportional(
        cls,
        width_multiplier: float,
        depths: Sequence[int] = (3, 3, 9, 3),
        space: SearchSpace | None = None,
    ) -> SubnetConfig:
        """Scale the maximal widths by one multiplier in [0.5, 1.0].

        Each width is rounded to the nearest point of the space's width grid.
        """
        if not 0.5 <= width_multiplier <= 1.0:
            raise ValidationError("width multiplier must lie in [0.5, 1.0]")
        space = space or default_space()
        dims = []
        for i, spec in enumerate(space.stages):
            target = width_multiplier * spec.dim_max
            grid = space.width_choices(i)
            dims.append(min(grid, key=lambda g: (abs(g - target), g)))
        return cls(depths=tuple(depths), dims=tuple(dims))

    def to_dict(self) -> dict:
        return {"depths": list(self.depths), "dims": list(self.dims)}


def default_space() -> SearchSpace:
    """The four-stage ConvNeXt-v2 space: widths 48-96 up to 384-768, stage-3 depth 9-27."""
    dims = [(48, 96), (96, 192), (192, 384), (384, 768)]
    depths = [(3, 3), (3, 3), (9, 27), (3, 3)]
    strides = [4, 2, 2, 2]
    blocks = []
    for i, ((lo, hi), (dlo, dhi), stride) in enumerate(zip(dims, depths, strides), start=1):
        blocks.append(BlockSpec(f"downsample_{i}", DOWNSAMPLE, lo, hi, 1, 1, stride))
        blocks.append(BlockSpec(f"convnext_block_{i}", CONVNEXT_STAGE, lo, hi, dlo, dhi, 1))
    return SearchSpace(blocks=tuple(blocks))


def validate(space: SearchSpace, config: SubnetConfig) -> list[str]:
    """Return every bound ``config`` violates in ``space``; empty means valid."""
    violations = []
    for i, spec in enumerate(space.stages):
        stage = i + 1
        depth, dim = config.depths[i], config.dims[i]
        if depth < spec.depth_min:
            violations.append(f"stage-{stage} depth below {spec.depth_min}")
        elif depth > spec.depth_max:
            violations.append(f"stage-{stage} depth above {spec.depth_max}")
        elif not _on_grid(depth, spec.depth_min, spec.depth_max, space.depth_step):
            violations.append(f"stage-{stage} depth not aligned")
        if dim < spec.dim_min:
            violations.append(f"stage-{stage} width below {spec.dim_min}")
        elif dim > spec.dim_max:
            violations.append(f"stage-{stage} width above {spec.dim_max}")
        elif not _on_grid(dim, spec.dim_min, spec.dim_max, space.width_step):
            violations.append(f"stage-{stage} width not aligned")
    return violations


def check_valid(space: SearchSpace, config: SubnetConfig) -> None:
    violations = validate(space, config)
    if violations:
        raise ValidationError(f"{config.id}: " + "; ".join(violations))


def space_size(space: SearchSpace) -> int:
    return math.prod(
        len(space.width_choices(i)) * len(space.depth_choices(i)) for i in range(4)
    )


def enumerate_space(
    space: SearchSpace, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[SubnetConfig]:
    """All subnets of ``space`` in lexicographic (dims, depths) order."""
    count = space_size(space)
    if count > cap:
        raise ValidationError(f"space has {count} subnets, above the cap of {cap}")
    width_axes = [space.width_choices(i) for i in range(4)]
    depth_axes = [space.depth_choices(i) for i in range(4)]
    return [
        SubnetConfig(depths=depths, dims=dims)
        for dims in itertools.product(*width_axes)
        for depths in itertools.product(*depth_axes)
    ]


REPRESENTATIVE_NAMES = ("Min", "Tiny", "Small", "Base", "Large")


def representative_subnets() -> dict[str, SubnetConfig]:
    """The five named subnets, smallest first."""
    full = (96, 192, 384, 768)
    return {
        "Min": SubnetConfig((3, 3, 9, 3), (48, 96, 192, 384)),
        "Tiny": SubnetConfig((3, 3, 9, 3), (72, 144, 288, 576)),
        "Small": SubnetConfig((3, 3, 9, 3), full),
        "Base": SubnetConfig((3, 3, 15, 3), full),
        "Large": SubnetConfig((3, 3, 27, 3), full),
    }


def resolve_subnet(ref: str) -> SubnetConfig:
    """Accept a representative name (case-insensitive) or a canonical id."""
    for name, config in representative_subnets().items():
        if ref.strip().lower() == name.lower():
            return config
    return SubnetConfig.from_id(ref)


def load_space(path: str | Path) -> SearchSpace:
    with open(path, encoding="utf-8") as fh:
        return SearchSpace.from_dict(json.load(fh))


def save_space(space: SearchSpace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(space.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_subnet(path: str | Path) -> SubnetConfig:
    with open(path, encoding="utf-8") as fh:
        return SubnetConfig.from_dict(json.load(fh))


def configs_to_records(configs: Iterable[SubnetConfig]) -> list[dict]:
    return [{"id": c.id, **c.to_dict()} for c in configs]
