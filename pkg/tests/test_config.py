import pytest

from dualhead.config import SCHEMA, VARIANTS, RunConfig, variant_overrides
from dualhead.errors import ConfigError


def test_defaults_round_trip_through_text():
    cfg = RunConfig.defaults()
    again = RunConfig.from_text(cfg.to_text())
    assert again.values == cfg.values


def test_every_key_documented():
    text = RunConfig.defaults().to_text()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"\n{key} = " in text


def test_text_parsing_and_comments():
    cfg = RunConfig.from_text("[optim]\nlr = 0.05  # smaller\n; note\n[run]\nseed = 18446744073709551615\n")
    assert cfg["optim"]["lr"] == 0.05
    assert cfg["run"]["seed"] == 2 ** 64 - 1
    assert cfg["optim"]["schedule"] == [(40, 10.0), (60, 10.0)]


@pytest.mark.parametrize("text,needle", [
    ("[model]\nmu = 1.5\n", "model.mu"),
    ("[model]\ncolour = red\n", "model.colour"),
    ("[extras]\na = 1\n", "[extras]"),
    ("[optim]\nschedule = 60:10,40:10\n", "optim.schedule"),
    ("[model]\nbackbone_taus = 3,4\n", "model.backbone_taus"),
    ("[run]\nseed = -1\n", "run.seed"),
    ("[data]\nfine_variants = 4\n", "data.fine_variants"),
    ("[ablate]\nvariants = dual,triple\n", "ablate.variants"),
    ("no section header\n", "malformed"),
])
def test_invalid_values_name_the_key(text, needle):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text(text)
    assert needle in str(err.value)


def test_phase_variation_allows_more_variants():
    cfg = RunConfig.from_text("[data]\nfine_vary = phase\nfine_variants = 5\n")
    assert cfg["data"]["fine_variants"] == 5


def test_overrides_revalidate():
    cfg = RunConfig.defaults().with_overrides(model={"fine_channels": 8})
    assert cfg.model_config().fine_channels == 8
    with pytest.raises(ConfigError):
        RunConfig.defaults().with_overrides(optim={"momentum": 1.0})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "absent.cfg")


def test_model_and_optimizer_views():
    cfg = RunConfig.defaults()
    m, o = cfg.model_config(), cfg.optimizer_config()
    assert (m.mu, m.alpha, m.lam) == (0.5, 2, 1.0)
    assert (o.learning_rate, o.momentum, o.nesterov, o.weight_decay) == (0.1, 0.9, True, 0.0005)


def test_variant_table():
    assert variant_overrides("single-coarse") == {"heads": "coarse"}
    dual = variant_overrides("dual")
    assert not dual["temporal_attention"] and not dual["spatial_attention"]
    assert variant_overrides("self-attention")["attention_source"] == "self"
    assert variant_overrides("dual+ta+sa")["attention_source"] == "cross"
    for v in VARIANTS:
        RunConfig.defaults().with_overrides(model=variant_overrides(v))
    with pytest.raises(ConfigError):
        variant_overrides("quad")
