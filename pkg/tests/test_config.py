import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covomix import config
from covomix.config import RunConfig
from covomix.errors import DataError


def test_defaults_follow_reference_setup():
    c = RunConfig()
    assert (c.lr, c.p_uncond, c.alpha, c.sigma_min, c.steps) == (1e-4, 0.3, 0.7, 1e-4, 32)
    assert (c.max_duration, c.min_monologue_s, c.min_short_monologue_s) == (40.0, 10.0, 1.0)


def test_dump_parse_roundtrip_and_normal_form():
    text = "# run\nseed = 3\n\nlr=0.002   # faster\nac_variant = stereo\n"
    cfg = config.parse(text)
    assert cfg.seed == 3 and cfg.lr == 0.002 and cfg.ac_variant == "stereo"
    normal = config.dump(cfg)
    assert config.dump(config.parse(normal)) == normal
    assert normal.splitlines()[0] == "data_dir = data"


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-8, 10.0), st.integers(0, 2**31), st.sampled_from(["euler", "midpoint"]),
       st.floats(0.0, 1.0))
def test_roundtrip_property(lr, seed, method, p):
    cfg = RunConfig(lr=lr, seed=seed, ode_method=method, p_uncond=p)
    back = config.parse(config.dump(cfg))
    assert back == cfg


@pytest.mark.parametrize("text,needle", [
    ("bogus = 1", "line 1: unknown key"),
    ("seed = 1\nseed = 2", "line 2: duplicate"),
    ("seed 1", "expected key=value"),
    ("steps = 0", "steps must be positive"),
    ("p_uncond = 1.5", "p_uncond"),
    ("ac_variant = huge", "ac_variant"),
    ("seed = 1.5", "integer"),
    ("lr = nan", "finite"),
    ("ac_dim = 30\nac_heads = 8", "divisible"),
])
def test_parse_errors(text, needle):
    with pytest.raises(DataError, match=needle):
        config.parse(text)


def test_overrides_and_file_io(tmp_path):
    cfg = config.apply_overrides(RunConfig(), ["seed=9", "alpha = 0.5"])
    assert cfg.seed == 9 and cfg.alpha == 0.5
    with pytest.raises(DataError):
        config.apply_overrides(cfg, ["nope=1"])
    with pytest.raises(DataError):
        config.apply_overrides(cfg, ["seed"])
    config.save(tmp_path / "run.cfg", cfg)
    assert config.load(tmp_path / "run.cfg") == cfg
    assert cfg.replace(seed=1).seed == 1 and str(cfg.work) == "work"
