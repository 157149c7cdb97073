import json

import pytest
from pydantic import ValidationError

from driftlab.config import (
    OUTPUT_ENV,
    ExperimentConfig,
    FinetuneConfig,
    SweepConfig,
    available_presets,
    expand_runs,
    load_config,
    load_preset,
    output_root,
    save_config,
    single_run_config,
)
from driftlab.errors import ConfigError


def test_method_defaults():
    assert FinetuneConfig(method="s2p").resolved().alpha == 1.0
    ssil = FinetuneConfig(method="ssil").resolved()
    assert (ssil.alpha, ssil.k1, ssil.k2, ssil.k2_prime) == (0.5, 3000, 200, 300)
    assert FinetuneConfig(method="mixdata").resolved().beta == 0.2
    assert FinetuneConfig().tau == 0.5
    assert FinetuneConfig().adam_betas == (0.9, 0.999)


def test_method_specific_fields_are_validated():
    with pytest.raises(ValidationError):
        FinetuneConfig(method="gumbel", alpha=0.5)
    with pytest.raises(ValidationError):
        FinetuneConfig(method="sil", beta=0.2)
    with pytest.raises(ValidationError):
        FinetuneConfig(method="s2p", k1=100)
    with pytest.raises(ValidationError):
        FinetuneConfig(method="mixdata", beta=1.5)
    with pytest.raises(ValidationError):
        FinetuneConfig(method="sil", k2=0)
    FinetuneConfig(method="sil", k2=0, allow_zero_imitation=True)


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"game": {"vocab": 10}})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"seed": 1})


def test_for_method_drops_inapplicable_fields():
    ssil = FinetuneConfig(method="ssil", alpha=0.3, k1=10)
    gumbel = ssil.for_method("gumbel")
    assert gumbel.alpha is None and gumbel.k1 is None
    s2p = ssil.for_method("s2p")
    assert s2p.alpha == 0.3 and s2p.k1 is None


def test_sweep_expands_to_the_cartesian_product():
    config = ExperimentConfig(
        finetune=FinetuneConfig(method="ssil"), sweep=SweepConfig(alpha=[0, 0.1, 0.5, 1.0]), seeds=[1, 2, 3],
    )
    runs = expand_runs(config)
    assert len(runs) == 12
    assert {r.tag for r in runs} == {"ssil__alpha0", "ssil__alpha0.1", "ssil__alpha0.5", "ssil__alpha1"}
    assert all(r.finetune.seed == r.seed for r in runs)


def test_sweep_drops_values_that_do_not_apply():
    config = ExperimentConfig(sweep=SweepConfig(method=["gumbel", "s2p"], alpha=[0.5, 1.0]), seeds=[1])
    tags = sorted(r.tag for r in expand_runs(config))
    assert tags == ["gumbel", "s2p__alpha0.5", "s2p__alpha1"]


def test_single_run_config_round_trips(tmp_path):
    config = ExperimentConfig(sweep=SweepConfig(alpha=[0.1, 0.2]), seeds=[4, 5])
    run = expand_runs(config)[0]
    path = save_config(single_run_config(config, run), tmp_path / "config.json")
    reloaded = load_config(path)
    assert reloaded.sweep is None
    assert reloaded.seeds == [run.seed]
    assert reloaded.finetune == run.finetune
    assert json.loads(path.read_text())["finetune"]["alpha"] == run.finetune.alpha


def test_load_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")
    (tmp_path / "broken.yaml").write_text("name: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.yaml")


@pytest.mark.parametrize("name", available_presets())
def test_presets_are_valid(name):
    config = load_preset(name)
    assert expand_runs(config)


def test_paper_shape_preset_covers_four_methods():
    config = load_preset("paper-shape")
    runs = expand_runs(config)
    assert {r.finetune.method for r in runs} == {"gumbel", "s2p", "sil", "ssil"}
    assert len(runs) == 20
    alphas = {r.finetune.method: r.finetune.alpha for r in runs}
    assert alphas["s2p"] == 1.0 and alphas["ssil"] == 0.5


def test_sil_grid_preset_spans_the_alpha_grid():
    config = load_preset("sil-grid")
    assert config.sweep.alpha == [0.0, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    runs = expand_runs(config)
    assert len(runs) == 162
    assert len({(r.finetune.k1, r.finetune.k2, r.finetune.k2_prime, r.finetune.alpha) for r in runs}) == 162


def test_unknown_preset():
    with pytest.raises(ConfigError):
        load_preset("does-not-exist")


def test_output_root_precedence(monkeypatch, tmp_path):
    config = ExperimentConfig(output_dir="from-config")
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert str(output_root(config)) == "from-config"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert output_root(config) == tmp_path
    assert str(output_root(config, "explicit")) == "explicit"
