import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from edgevfm.exceptions import ValidationError
from edgevfm.search_space import (
    BlockSpec,
    SearchSpace,
    SubnetConfig,
    default_space,
    enumerate_space,
    load_space,
    representative_subnets,
    resolve_subnet,
    save_space,
    space_size,
    validate,
)


def test_default_space_matches_table(space):
    assert [b.kind for b in space.blocks] == ["downsample", "convnext_stage"] * 4
    assert space.blocks[4].dim_max == 384
    assert space.blocks[5].depth_max == 27
    assert space.blocks[5].depth_min == 9
    assert [(s.dim_min, s.dim_max) for s in space.stages] == [(48, 96), (96, 192), (192, 384), (384, 768)]
    assert [s.depth_min for s in space.stages] == [3, 3, 9, 3]
    assert [b.stride for b in space.downsamples] == [4, 2, 2, 2]
    assert math.prod(b.stride for b in space.blocks) == 32
    assert space.input_resolution == 224


def test_validate_examples(space):
    assert validate(space, SubnetConfig((3, 3, 9, 3), (48, 96, 192, 384))) == []
    step3 = SearchSpace(space.blocks, width_step=24, depth_step=3)
    v = validate(step3, SubnetConfig((3, 3, 8, 3), (48, 96, 192, 384)))
    assert any("stage-3 depth" in x for x in v)
    assert validate(step3, SubnetConfig((3, 3, 12, 3), (48, 96, 192, 384))) == []
    v = validate(space, SubnetConfig((3, 3, 9, 3), (48, 96, 192, 1024)))
    assert v == ["stage-4 width above 768"]


def test_validate_lists_every_violation(space):
    v = validate(space, SubnetConfig((2, 3, 28, 3), (40, 100, 192, 384)))
    assert len(v) == 4


def test_enumerate_two_choices_per_axis(space):
    coarse = SearchSpace(space.blocks, width_step=384, depth_step=18)
    configs = enumerate_space(coarse)
    assert len(configs) == 32
    assert coarse.min_config() in configs and coarse.max_config() in configs


def test_enumerate_default_contains_representatives(space, reps):
    configs = enumerate_space(space)
    assert len(configs) == space_size(space) == 3 * 5 * 9 * 17 * 4
    ids = {c.id for c in configs}
    for c in reps.values():
        assert c.id in ids
        assert validate(space, c) == []
    keys = [(c.dims, c.depths) for c in configs]
    assert keys == sorted(keys)
    assert len(ids) == len(configs)


def test_enumerate_deterministic(space):
    a = json.dumps([c.id for c in enumerate_space(space)])
    b = json.dumps([c.id for c in enumerate_space(space)])
    assert a == b


def test_enumerate_cap(space):
    with pytest.raises(ValidationError):
        enumerate_space(space, cap=100)


def test_representatives(reps):
    assert list(reps) == ["Min", "Tiny", "Small", "Base", "Large"]
    assert reps["Base"].depths == (3, 3, 15, 3)
    assert reps["Tiny"].dims == (72, 144, 288, 576)
    assert reps["Large"].depths == (3, 3, 27, 3)
    assert reps["Min"].dims == (48, 96, 192, 384)


def test_canonical_id_roundtrip(reps):
    assert reps["Min"].id == "d3-3-9-3_c48-96-192-384"
    for c in reps.values():
        assert SubnetConfig.from_id(c.id) == c
    assert resolve_subnet("large") == reps["Large"]
    with pytest.raises(ValidationError):
        SubnetConfig.from_id("garbage")


def test_proportional_constructor(reps, space):
    assert SubnetConfig.proportional(0.5) == reps["Min"]
    assert SubnetConfig.proportional(0.75) == reps["Tiny"]
    assert SubnetConfig.proportional(1.0) == reps["Small"]
    assert SubnetConfig.proportional(1.0, (3, 3, 27, 3)) == reps["Large"]
    with pytest.raises(ValidationError):
        SubnetConfig.proportional(0.4)


def test_block_invariants():
    with pytest.raises(ValidationError):
        BlockSpec("x", "downsample", 8, 4, 1, 1, 2)
    with pytest.raises(ValidationError):
        BlockSpec("x", "downsample", 4, 8, 1, 2, 2)
    with pytest.raises(ValidationError):
        BlockSpec("x", "convnext_stage", 4, 8, 1, 2, 3)


def test_space_file_roundtrip(tmp_path, space):
    path = tmp_path / "space.json"
    save_space(space, path)
    assert load_space(path) == space
    doc = json.loads(path.read_text())
    assert set(doc) == {"input_resolution", "width_step", "depth_step", "blocks"}


small_spaces = st.builds(
    lambda w, d: SearchSpace(default_space().blocks, width_step=w, depth_step=d),
    st.sampled_from([96, 192, 384]),
    st.sampled_from([6, 9, 18]),
)


@settings(max_examples=20, deadline=None)
@given(small_spaces)
def test_enumeration_properties(sp):
    configs = enumerate_space(sp)
    lo = sp.min_config()
    assert len({c.id for c in configs}) == len(configs)
    for c in configs:
        assert validate(sp, c) == []
        assert all(a <= b for a, b in zip(lo.dims, c.dims))
        assert all(a <= b for a, b in zip(lo.depths, c.depths))
