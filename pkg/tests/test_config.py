import pytest
from hypothesis import given, settings, strategies as st

from leadq import config as configmod
from leadq.config import ExperimentConfig
from leadq.errors import ConfigurationError


def test_defaults_match_published_values():
    c = ExperimentConfig()
    assert (c.clients, c.n_arrivals, c.n_query, c.held_out_size) == (10, 10, 1, 1000)
    assert c.partition.alpha == 0.5
    assert (c.fl.iterations, c.fl.lr, c.fl.local_epochs, c.fl.batch_size) == (30, 0.01, 1, 64)
    m = c.leadq
    assert (m.gamma, m.episode_length, m.buffer_capacity, m.batch_size, m.lr) == (0.99, 10, 1000, 32, 0.01)
    assert (m.warmup_steps, m.update_every, m.max_update_steps) == (32, 1, 200)


def test_round_trip_defaults():
    c = ExperimentConfig()
    assert configmod.parse(configmod.serialize(c)) == c


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 10), st.floats(0.01, 100, allow_nan=False),
       st.sampled_from(["random", "uncertainty", "coreset_local", "coreset_global", "leadq"]),
       st.lists(st.integers(0, 99), min_size=1, max_size=4), st.booleans(),
       st.lists(st.integers(1, 64), max_size=3))
def test_round_trip_property(k, nu, alpha, policy, seeds, clip, hidden):
    c = configmod.from_flat({"clients": k, "n_arrivals": nu, "n_query": min(1, nu), "partition.alpha": alpha,
                             "policy": policy, "seeds": seeds, "leadq.clip_targets": clip, "model.hidden": hidden})
    assert configmod.parse(configmod.serialize(c)) == c


def test_parse_comments_and_overrides():
    text = "# a comment\nclients = 4  # trailing\nfl.lr = 0.5\nseeds = [1, 2]\npolicy = coreset-local\n"
    c = configmod.parse(text)
    assert c.clients == 4 and c.fl.lr == 0.5 and c.seeds == (1, 2) and c.policy == "coreset_local"


@pytest.mark.parametrize("flat, field", [
    ({"clients": 0}, "clients"),
    ({"n_query": 11}, "n_query"),
    ({"fl.lr": -1}, "learning rate"),
    ({"leadq.gamma": 1.0}, "discount"),
    ({"partition.alpha": 0}, "alpha"),
    ({"policy": "greedy"}, "policy"),
    ({"nonsense": 1}, "nonsense"),
    ({"fl.nonsense": 1}, "fl.nonsense"),
    ({"clients": "many"}, "clients"),
])
def test_invalid_config_names_field(flat, field):
    with pytest.raises(ConfigurationError, match=field):
        configmod.from_flat(flat)


def test_builtin_configs_load():
    for name in ("published", "coreset_gap", "policy_compare"):
        configmod.load(configmod.builtin_config_path(name))
    with pytest.raises(ConfigurationError):
        configmod.builtin_config_path("nope")


def test_published_config_equals_defaults():
    c = configmod.load(configmod.builtin_config_path("published"))
    assert c.replace(out=ExperimentConfig().out) == ExperimentConfig()
