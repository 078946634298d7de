from __future__ import annotations

import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aosearch.config import (ConfigError, ScenarioConfig, config_dict, dump_config,
                             load_config, parse_config)
from aosearch.rng import derive_seed

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

finite = st.floats(-1e4, 1e4, allow_nan=False)
pairs = st.lists(st.tuples(finite, finite), max_size=5)


class TestBundledConfigs:
    @pytest.mark.parametrize("name", ["predefined.ini", "adaptive.ini"])
    def test_load_and_validate(self, name):
        cfg = load_config(CONFIGS / name)
        cfg.validate()
        assert cfg.mission == name.split(".")[0]

    def test_adaptive_fields(self):
        cfg = load_config(CONFIGS / "adaptive.ini")
        assert cfg.start == (0.0, 0.0) and cfg.grid_cell_size == 30.0
        assert cfg.planner_config().max_path_length == 2000
        assert cfg.resolve(cfg.probability_map) == CONFIGS / "probability.csv"

    def test_predefined_fields(self):
        cfg = load_config(CONFIGS / "predefined.ini")
        assert cfg.person_positions == [(20.0, 20.0), (45.0, 40.0)]
        assert cfg.waypoints[0] == (20.0, 5.0) and len(cfg.waypoints) == 4


class TestRoundTrip:
    def test_defaults(self):
        cfg = ScenarioConfig()
        assert parse_config(dump_config(cfg)) == cfg

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 32), density=st.floats(0, 0.99),
           persons=pairs, waypoints=pairs, verbose=st.booleans(),
           start=st.none() | st.tuples(finite, finite),
           geo=st.none() | st.tuples(st.floats(-90, 90), st.floats(-180, 180)),
           budget=st.sampled_from([math.inf, 500.0, 1234.5]),
           mid=st.text("abcdefgh-_0123", min_size=1, max_size=12))
    def test_parse_dump(self, seed, density, persons, waypoints, verbose, start, geo,
                        budget, mid):
        cfg = ScenarioConfig(seed=seed, density=density, person_positions=persons,
                             waypoints=waypoints, verbose=verbose, start=start, geo=geo,
                             mission_id=mid, planner={"max_path_length": budget},
                             detector_params={"threshold_offset": 0.07})
        back = parse_config(dump_config(cfg))
        assert back == cfg
        assert config_dict(back) == config_dict(cfg)


class TestErrors:
    @pytest.mark.parametrize("text, field", [
        ("[forest]\ndensity = lots\n", "forest.density"),
        ("[forest]\ncolour = green\n", "forest.colour"),
        ("[weather]\nrain = 1\n", "[weather]"),
        ("[scenario]\nverbose = maybe\n", "scenario.verbose"),
        ("[predefined]\nwaypoints = 1 2 3\n", "predefined.waypoints"),
        ("[scenario\n", "config syntax"),
    ])
    def test_parse_names_field(self, text, field):
        with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
            parse_config(text)

    @pytest.mark.parametrize("kw, field", [
        ({"mission": "spiral"}, "scenario.mission"),
        ({"density": 1.0}, "forest.density"),
        ({"region": (0, 0, 0, 10)}, "region"),
        ({"r_min": 4.0}, "forest.r_min"),
        ({"altitude_agl": 10.0}, "camera.altitude_agl"),
        ({"waypoints": [(0, 0)]}, "predefined.waypoints"),
        ({"dem_path": "missing.asc"}, "dem.path"),
        ({"planner": {"max_path_length": -1}}, "planner"),
        ({"detector_params": {"bogus": 1}}, "detector"),
    ])
    def test_validate_names_field(self, kw, field):
        base = {"waypoints": [(0, 0), (10, 0)]}
        base.update(kw)
        with pytest.raises(ConfigError, match=field):
            ScenarioConfig(**base).validate()

    def test_adaptive_needs_map(self):
        with pytest.raises(ConfigError, match="adaptive.probability_map"):
            ScenarioConfig(mission="adaptive").validate()

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.ini")


class TestSeeds:
    def test_roles_distinct_and_stable(self):
        s = ScenarioConfig(seed=7).seeds()
        assert len(set(s.values())) == len(s) == 4
        assert s["scene"] == derive_seed(7, "scene")
        assert ScenarioConfig(seed=7).seeds() == s != ScenarioConfig(seed=8).seeds()
