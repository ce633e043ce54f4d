import json
import math

import numpy as np
import pytest

from gpdm_bayes.config import (
    ConfigError,
    apply_overrides,
    apply_scale,
    compile_field,
    config_hash,
    list_presets,
    load_preset,
    parse_config,
)

MINIMAL = {
    "geometry": {"kind": "semi_ellipse", "n": 40},
    "problem": "elliptic",
    "truth": {"kappa": "2 + cos(3*a)", "u": "sin(a)"},
    "prior": {"tau": 0.2, "s": 4},
    "kernel": {},
    "mcmc": {"zeta": 0.1, "iterations": 100},
}


def test_every_preset_parses():
    names = list_presets()
    assert len(names) == 13
    for name in names:
        cfg = load_preset(name)
        assert cfg.name == name and cfg.raw["data_seed"] == 1 and cfg.raw["noise_var"] == 0.01


def test_reference_preset_values():
    e = load_preset("elliptic-1d-k1").raw
    assert e["geometry"]["n"] == 630 and e["prior"]["tau"] == 0.2 and e["prior"]["s"] == 4
    assert e["mcmc"]["zeta"] == 0.01 and e["mcmc"]["iterations"] == 10000
    t = load_preset("elliptic-2d").raw
    assert (t["geometry"]["n1"], t["geometry"]["n2"]) == (36, 36)
    assert t["prior"]["k_nn"] == 4 and t["prior"]["L"] == 10 and t["mcmc"]["iterations"] == 150000
    assert load_preset("elliptic-1d-k1-blind").raw["prior"]["kind"] == "boundary_blind"


def test_defaults_filled():
    cfg = parse_config(MINIMAL)
    assert cfg.prior["m"] == 20 and cfg.kernel["ghost_K"] == 10 and cfg.mcmc["burn_in"] == 0


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        load_preset("nope")


def test_error_carries_line_number():
    text = json.dumps(MINIMAL | {"prior": {"tau": -1.0, "s": 4}}, indent=2)
    with pytest.raises(ConfigError) as e:
        parse_config(text, "x.json")
    line = next(i for i, t in enumerate(text.splitlines(), 1) if '"tau"' in t)
    assert e.value.line == line
    assert str(e.value).startswith(f"x.json:{line}:")


def test_bad_json_line():
    with pytest.raises(ConfigError) as e:
        parse_config('{\n"a": 1,\n}')
    assert e.value.line == 3


@pytest.mark.parametrize(
    "patch",
    [
        {"problem": "wave"},
        {"geometry": {"kind": "sphere", "n": 10}},
        {"geometry": {"kind": "semi_ellipse", "n": 2}},
        {"prior": {"tau": 0.2, "s": 0.4}},
        {"mcmc": {"zeta": 1.0, "iterations": 10}},
        {"mcmc": {"zeta": 0.1, "iterations": 10, "burn_in": 10}},
        {"truth": {"kappa": "2"}},
        {"noise_var": 0},
    ],
)
def test_validation_rejects(patch):
    with pytest.raises(ConfigError):
        parse_config(MINIMAL | patch)


def test_heat_needs_t_star():
    cfg = MINIMAL | {"problem": "heat", "truth": {"u0": "sin(a)"}}
    with pytest.raises(ConfigError, match="t_star"):
        parse_config(cfg)
    assert parse_config(cfg | {"t_star": 2.0}).t_star == 2.0


def test_compile_field_values():
    f = compile_field("2 + cos(3*a)", ("a",))
    np.testing.assert_allclose(f(np.array([0.0, np.pi])), [3.0, 1.0])
    g = compile_field("a*b + pi", ("a", "b"))
    assert g(2.0, 3.0) == pytest.approx(6 + math.pi)


@pytest.mark.parametrize(
    "expr", ["__import__('os')", "a.real", "open('x')", "[a]", "lambda: 1", "b", "a if a else 1", "x = 1"]
)
def test_compile_field_rejects(expr):
    with pytest.raises(ConfigError):
        compile_field(expr, ("a",))


def test_overrides():
    cfg = apply_overrides(parse_config(MINIMAL), ["prior.tau=0.5", "mcmc.seed=3", "prior.kind=boundary_blind"])
    assert cfg.prior["tau"] == 0.5 and cfg.mcmc["seed"] == 3 and cfg.prior["kind"] == "boundary_blind"
    with pytest.raises(ConfigError):
        apply_overrides(parse_config(MINIMAL), ["prior.tau"])
    with pytest.raises(ConfigError):
        apply_overrides(parse_config(MINIMAL), ["prior.tau=-3"])


def test_scale_rule_1d():
    cfg = apply_scale(load_preset("elliptic-1d-k1"), 0.5, 4000)
    assert cfg.geometry["n"] == 315
    assert cfg.mcmc["iterations"] == 4000 and cfg.mcmc["burn_in"] == 2000
    assert cfg.mcmc["zeta"] == pytest.approx(0.01 / math.sqrt(0.5))
    assert cfg.scaling["scale"] == 0.5 and cfg.scaling["iterations"] == 4000
    plain = apply_scale(load_preset("elliptic-1d-k1"), 0.5)
    assert plain.mcmc["iterations"] == 5000 and plain.mcmc["burn_in"] == 2500


def test_scale_rule_torus_and_identity():
    cfg = apply_scale(load_preset("elliptic-2d"), 0.25)
    assert (cfg.geometry["n1"], cfg.geometry["n2"]) == (18, 18)
    base = load_preset("heat-1d-a")
    assert apply_scale(base, 1.0) is base
    with pytest.raises(ConfigError):
        apply_scale(base, 1.5)


def test_hash_is_stable():
    assert config_hash(load_preset("heat-1d-a")) == config_hash(load_preset("heat-1d-a"))
    assert config_hash(load_preset("heat-1d-a")) != config_hash(load_preset("heat-1d-b"))
