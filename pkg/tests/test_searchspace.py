import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_space
from nullboost.searchspace import (Configuration, MalformedSpaceError, builtin_space_path, define_space,
                                   load_space, sample, validate)

DEPTH = [
    {"name": "depth", "kind": "choice", "branches": {
        1: [],
        2: [{"name": "p_a", "kind": "uniform", "args": {"lo": 0, "hi": 1}}],
        3: [{"name": "p_a", "kind": "uniform", "args": {"lo": 0, "hi": 1}},
            {"name": "p_b", "kind": "uniform", "args": {"lo": 0, "hi": 1}}],
    }},
]


def test_single_uniform_space():
    s = define_space([{"name": "x", "kind": "uniform", "args": {"lo": 0, "hi": 1}}])
    assert len(s) == 1
    assert all(p.kind != "choice" for p in s.nodes.values())


def test_third_layer_param_only_active_at_depth_3():
    s = define_space(DEPTH)
    rng = np.random.default_rng(0)
    for _ in range(300):
        c = s.sample(rng)
        assert ("p_b" in c) == (c["depth"] == 3)
        assert ("p_a" in c) == (c["depth"] >= 2)


def test_duplicate_name_on_path_rejected():
    spec = [{"name": "pool_size", "kind": "uniform", "args": {"lo": 0, "hi": 1}},
            {"name": "c", "kind": "choice", "branches": {
                "x": [{"name": "pool_size", "kind": "uniform", "args": {"lo": 0, "hi": 1}}]}}]
    with pytest.raises(MalformedSpaceError) as e:
        define_space(spec)
    assert "pool_size" in str(e.value)


def test_duplicate_siblings_rejected():
    spec = [{"name": "a", "kind": "uniform", "args": {"lo": 0, "hi": 1}}] * 2
    with pytest.raises(MalformedSpaceError):
        define_space(spec)


@pytest.mark.parametrize("bad", [
    [{"name": "c", "kind": "choice", "branches": {}}],
    [{"name": "c", "kind": "categorical", "args": {"options": []}}],
    [{"name": "u", "kind": "uniform", "args": {"lo": 1, "hi": 1}}],
    [{"name": "u", "kind": "loguniform", "args": {"lo": 0, "hi": 1}}],
    [{"name": "u", "kind": "quniform", "args": {"lo": 0, "hi": 1, "q": 0}}],
    [{"name": "u", "kind": "gamma"}],
    [{"kind": "uniform", "args": {"lo": 0, "hi": 1}}],
    [],
])
def test_malformed_specs(bad):
    with pytest.raises(MalformedSpaceError):
        define_space(bad)


def test_error_names_offending_node():
    spec = [{"name": "c", "kind": "choice", "branches": {"x": [{"name": "bad", "kind": "uniform",
                                                                 "args": {"lo": 2, "hi": 1}}]}}]
    with pytest.raises(MalformedSpaceError) as e:
        define_space(spec)
    assert e.value.node == "c=x/bad"


def test_sample_examples():
    rng = np.random.default_rng(1)
    u = define_space([{"name": "x", "kind": "uniform", "args": {"lo": 0, "hi": 1}}])
    one = define_space([{"name": "x", "kind": "categorical", "args": {"options": ["a"]}}])
    q = define_space([{"name": "x", "kind": "quniform", "args": {"lo": 1, "hi": 10, "q": 1}}])
    for _ in range(500):
        assert 0 <= sample(u, rng)["x"] <= 1
        assert sample(one, rng)["x"] == "a"
        v = sample(q, rng)["x"]
        assert isinstance(v, int) and 1 <= v <= 10


def test_quantized_endpoints_reachable():
    q = define_space([{"name": "x", "kind": "quniform", "args": {"lo": 1, "hi": 10, "q": 1}}])
    rng = np.random.default_rng(2)
    seen = {sample(q, rng)["x"] for _ in range(3000)}
    assert seen == set(range(1, 11))


def test_validate_messages():
    s = define_space(DEPTH)
    assert validate(s, {"depth": 2, "p_a": 0.5}) == []
    assert any("inactive parameter assigned: p_b" in m for m in validate(s, {"depth": 2, "p_a": 0.5, "p_b": 0.1}))
    assert any("missing active parameter: p_a" in m for m in validate(s, {"depth": 3, "p_b": 0.1}))
    assert any("unknown parameter: zz" in m for m in validate(s, {"depth": 1, "zz": 1}))
    assert any("out of domain" in m for m in validate(s, {"depth": 2, "p_a": 1.5}))
    assert any("out of domain" in m for m in validate(s, {"depth": 4}))


def test_bool_is_not_an_integer_option():
    s = define_space([{"name": "x", "kind": "categorical", "args": {"options": [1, 2]}}])
    assert validate(s, {"x": True})
    s2 = define_space([{"name": "x", "kind": "quniform", "args": {"lo": 0, "hi": 3, "q": 1}}])
    assert validate(s2, {"x": True})


def test_sampling_determinism():
    s = random_space(5)
    a = s.sample(np.random.default_rng(9))
    b = s.sample(np.random.default_rng(9))
    assert a == b


def test_marginal_coverage():
    for k in range(1, 9):
        s = define_space([{"name": "x", "kind": "categorical", "args": {"options": list(range(k))}}])
        rng = np.random.default_rng(k)
        seen = {s.sample(rng)["x"] for _ in range(10_000)}
        assert seen == set(range(k))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_samples_of_fuzzed_spaces_validate(space_seed, sample_seed):
    s = random_space(space_seed)
    rng = np.random.default_rng(sample_seed)
    for _ in range(20):
        assert s.validate(s.sample(rng)) == []


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.01, 100), st.floats(0.01, 10))
def test_quantize_closed_over_range(lo, width, q):
    s = define_space([{"name": "x", "kind": "quniform", "args": {"lo": lo, "hi": lo + width, "q": q}}])
    p = s.nodes["x"]
    for u in np.linspace(lo, lo + width, 7):
        v = p.from_internal(u)
        assert lo <= v <= lo + width
        assert p.contains(v)


@pytest.mark.parametrize("name", ["image", "two_view"])
def test_builtin_spaces_load_and_sample(name):
    s = load_space(builtin_space_path(name))
    rng = np.random.default_rng(0)
    for _ in range(500):
        assert s.validate(s.sample(rng)) == []


def test_image_space_size():
    s = load_space(builtin_space_path("image"))
    assert 40 <= len(s) <= 60


def test_configuration_mapping_access():
    c = Configuration({"a": 1})
    assert c["a"] == 1 and "a" in c and c.get("b", 3) == 3


def test_yaml_file_roundtrip(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(
        "- name: depth\n  kind: choice\n  branches:\n    1: []\n    2:\n"
        "      - {name: l2, kind: quniform, args: {lo: 4, hi: 32, q: 1}}\n"
    )
    s = load_space(p)
    assert set(s.names) == {"depth", "l2"}
    assert s.space_id == define_space(s.describe()).space_id
