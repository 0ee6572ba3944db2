import numpy as np
import pytest

from gcpool.experiments import (ConfigError, RunConfig, matching_epoch, read_epoch_accuracy,
                                train)
from gcpool.svg import chart_from_csv, line_chart, read_csv_columns


def small(**kw):
    base = dict(cov_train=16, cov_test=8, batch_size=16, epochs=3)
    base.update(kw)
    return RunConfig(**base)


def test_config_round_trip():
    cfg = small(head="gap", probe_descent=True, lr=0.125)
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_config_problems_enumerated():
    with pytest.raises(ConfigError) as info:
        RunConfig.from_mapping({"head": "x", "epochs": "-1", "bogus": "1"})
    assert len(info.value.problems) == 1  # unknown keys are reported before values
    with pytest.raises(ConfigError) as info:
        RunConfig(head="x", epochs=-1, momentum=1.5).validate()
    assert len(info.value.problems) == 3


def test_epoch_accuracy_rows():
    res = train(small())
    assert len(res.epoch_acc) == 3
    assert read_epoch_accuracy(res.convergence_csv()) == res.epoch_acc
    steps = [r[0] for r in res.rows]
    assert steps == list(range(len(steps))) and len(steps) == 12
    # polynomial schedule over 3 epochs, power 2
    lrs = sorted({r[2] for r in res.rows}, reverse=True)
    np.testing.assert_allclose(lrs, [0.05, 0.05 * (2 / 3) ** 2, 0.05 * (1 / 3) ** 2])


def test_step_cap():
    res = train(small(steps=5))
    assert len(res.rows) == 5 and len(res.epoch_acc) == 2


def test_matching_epoch():
    assert matching_epoch([0.1, 0.5, 0.9], [0.2, 0.5, 0.9]) == 3
    assert matching_epoch([0.6, 0.7], [0.2, 0.5]) == 1
    assert matching_epoch([0.1], [0.5]) is None
    with pytest.raises(ValueError):
        matching_epoch([0.1], [])


def test_svg_polylines():
    svg = line_chart({"a": ([0, 1, 2], [1, None, 3]), "b": ([0, 1], [2, 2])}, title="t<1>")
    assert svg.count("<polyline") == 2 and "t&lt;1&gt;" in svg
    text = "x,y,z\n0,1,2\n1,3,\n"
    assert read_csv_columns(text)["z"] == [2.0, None]
    assert chart_from_csv(text, "x", ["y", "z"]).count("<polyline") == 2
