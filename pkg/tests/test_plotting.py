import numpy as np
import pytest

from driftlab.errors import DataError
from driftlab.metrics import MetricsRecord, write_metrics_csv
from driftlab.plotting import PANELS, plot_svg, series_stats


def make_csv(path, method, seed, offset):
    records = [
        MetricsRecord(step=s, bleu_tgt=10.0 + s + offset, bleu_pvt=90.0 - s, nll=1.0, real_nll=0.5,
                      grad_cos_raw=0.1, grad_cos_ma100=0.1 * offset, method=method, seed=seed)
        for s in (0, 5, 10)
    ]
    write_metrics_csv(path, records)
    return records


def test_single_seed_band_collapses_to_the_line(tmp_path):
    records = make_csv(tmp_path / "a.csv", "s2p", 1, 0.0)
    steps, means, stds = series_stats([records], "bleu_tgt")
    assert steps.tolist() == [0, 5, 10]
    assert means.tolist() == [10.0, 15.0, 20.0]
    assert np.all(stds == 0.0)


def test_mean_and_std_over_seeds(tmp_path):
    a = make_csv(tmp_path / "a.csv", "s2p", 1, 0.0)
    b = make_csv(tmp_path / "b.csv", "s2p", 2, 2.0)
    _, means, stds = series_stats([a, b], "bleu_tgt")
    assert means.tolist() == [11.0, 16.0, 21.0]
    assert stds.tolist() == [1.0, 1.0, 1.0]


def test_one_svg_per_metric_and_deterministic_bytes(tmp_path):
    make_csv(tmp_path / "a.csv", "s2p", 1, 0.0)
    make_csv(tmp_path / "b.csv", "ssil", 1, 1.0)
    csvs = [tmp_path / "a.csv", tmp_path / "b.csv"]
    first = plot_svg(csvs, tmp_path / "one")
    second = plot_svg(csvs, tmp_path / "two")
    assert [p.name for p in first] == [f"{m}.svg" for m in PANELS]
    for x, y in zip(first, second):
        assert x.read_bytes() == y.read_bytes()
        assert x.read_text().lstrip().startswith("<?xml")


def test_schema_mismatch_is_a_data_error(tmp_path):
    (tmp_path / "bad.csv").write_text("step,loss\n0,1.0\n")
    with pytest.raises(DataError):
        plot_svg([tmp_path / "bad.csv"], tmp_path / "out")
    make_csv(tmp_path / "a.csv", "s2p", 1, 0.0)
    with pytest.raises(DataError):
        plot_svg([tmp_path / "a.csv"], tmp_path / "out", metrics=["accuracy"])
