import numpy as np
import pytest
from hypothesis import given, strategies as st

from gcpool.optim import (PRESETS, ScheduleSpec, SgdState, emit_schedule, lr_at,
                          schedule_from_name, sgd_step)


def step(w, g, **kw):
    state = SgdState(**kw)
    params = [{"W": np.array([w], dtype=float)}]
    sgd_step(state, params, [{"W": np.array([g], dtype=float)}])
    return state, params


def test_sgd_examples():
    _, p = step(1.0, 0.5, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert p[0]["W"][0] == pytest.approx(0.95, abs=1e-15)
    _, p = step(1.0, 0.0, lr=0.1, momentum=0.7, weight_decay=0.0)
    assert p[0]["W"][0] == 1.0
    state = SgdState(lr=0.1, momentum=0.9, weight_decay=0.0)
    params = [{"W": np.zeros(1)}]
    for _ in range(2):
        sgd_step(state, params, [{"W": np.ones(1)}])
    assert params[0]["W"][0] == pytest.approx(-0.29, abs=1e-15)


def test_sgd_zero_lr_is_identity(rng):
    W = rng.standard_normal((3, 4))
    state = SgdState(lr=0.0)
    params = [{"W": W.copy()}]
    sgd_step(state, params, [{"W": rng.standard_normal((3, 4))}])
    np.testing.assert_array_equal(params[0]["W"], W)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step(SgdState(lr=0.1), [{"W": np.zeros(2)}], [{"W": np.zeros(3)}])


def test_schedule_examples():
    norm = PRESETS["resnet-norm"]
    assert all(lr_at(norm, e) == 0.1 for e in range(30))
    assert lr_at(norm, 30) == 0.1 ** 2
    adju = PRESETS["resnet-adju"]
    assert lr_at(adju, 1) == 0.1 and lr_at(adju, 50) == 0.0
    assert lr_at(PRESETS["resnet-fast"], 1) == 0.1
    mob = PRESETS["mobilenetv2-norm"]
    assert lr_at(mob, 0) == 0.045
    assert lr_at(mob, 1) == pytest.approx(0.0441, abs=1e-15)
    assert lr_at(PRESETS["mobilenetv2-adju"], 0) == 0.06
    sh = PRESETS["shufflenetv2-norm"]
    assert lr_at(sh, 0, step=0) == 0.5 and lr_at(sh, 0, step=sh.t_step) == 0.0
    poly = ScheduleSpec("polynomial", l0=0.1, e_start=0, e_final=50, power=2)
    assert lr_at(poly, 25) == pytest.approx(0.025, abs=1e-15)


def test_domain_errors():
    with pytest.raises(ValueError):
        lr_at(PRESETS["resnet-adju"], 0)
    with pytest.raises(ValueError):
        lr_at(PRESETS["mobilenetv2-adju"], 151)
    with pytest.raises(ValueError):
        ScheduleSpec("polynomial", e_start=5, e_final=5)
    with pytest.raises(ValueError):
        ScheduleSpec("stagewise-linear", stages=((0.1, 0.01, 0), (0.1, 0.01, 20)))
    with pytest.raises(ValueError):
        schedule_from_name("cosine")
    with pytest.raises(ValueError):
        emit_schedule(PRESETS["resnet-norm"], 0)


def linear(ls, le, n, e):
    return ls - (ls - le) / 50 * (e - n)


# independent closed forms for every preset, with the epoch range each covers
CLOSED_FORMS = {
    "resnet-norm": (range(0, 120), lambda e: 0.1 ** ((e // 30) + 1)),
    "resnet-fast": (range(1, 54), lambda e: 0.1 * (1 - (e - 1) / 52) ** 11),
    "resnet-adju": (range(1, 51), lambda e: 0.1 * (1 - (e - 1) / 49) ** 2),
    "mobilenetv2-norm": (range(0, 150), lambda e: 0.045 * 0.98 ** e),
    "mobilenetv2-fast": (range(0, 150), lambda e: 0.06 * 0.92 ** e),
    "mobilenetv2-adju": (range(0, 151), lambda e: (
        linear(6e-2, 1e-3, 0, e) if e < 50 else
        linear(1e-2, 1e-4, 50, e) if e < 100 else linear(1e-3, 1e-5, 100, e))),
    "shufflenetv2-norm": (range(0, 241), lambda e: 0.5 * (1 - e * 1250 / 300000)),
    "shufflenetv2-fast": (range(0, 61), lambda e: 0.5 * (1 - e * 1250 / 75000)),
    "shufflenetv2-adju": (range(0, 101), lambda e: 0.5 * (1 - e * 1250 / 125000)),
}


@pytest.mark.parametrize("name", sorted(CLOSED_FORMS))
def test_presets_bit_exact(name):
    epochs, f = CLOSED_FORMS[name]
    spec = PRESETS[name]
    for e in epochs:
        assert lr_at(spec, e) == f(e), (name, e)


def test_preset_endpoints():
    assert lr_at(PRESETS["resnet-fast"], 53) == 0.0
    for name, t in (("shufflenetv2-norm", 300000), ("shufflenetv2-fast", 75000),
                    ("shufflenetv2-adju", 125000)):
        assert lr_at(PRESETS[name], 0, step=t) == 0.0
        assert lr_at(PRESETS[name], 0, step=t // 2) == 0.25


def test_emit_schedule_rows():
    text = emit_schedule(PRESETS["resnet-adju"], 50)
    lines = text.strip().splitlines()
    assert lines[0] == "epoch,lr" and len(lines) == 51
    assert lines[1] == "1,0.1" and lines[-1] == "50,0.0"
    for line in lines[1:]:
        e, lr = line.split(",")
        assert float(lr) == lr_at(PRESETS["resnet-adju"], int(e))


def test_polynomial_linear_case():
    spec = ScheduleSpec("polynomial", l0=0.1, e_start=0, e_final=10, power=1)
    vals = [lr_at(spec, e) for e in range(11)]
    np.testing.assert_allclose(np.diff(vals), -0.01, atol=1e-15)
    assert vals[0] == 0.1 and vals[-1] == 0.0


def test_higher_power_lies_below():
    lo = ScheduleSpec("polynomial", l0=0.1, e_start=1, e_final=50, power=2)
    hi = ScheduleSpec("polynomial", l0=0.1, e_start=1, e_final=50, power=11)
    for e in range(2, 50):
        assert lr_at(hi, e) < lr_at(lo, e)


def test_stepdecay_distinct_values():
    text = emit_schedule(PRESETS["resnet-norm"], 100)
    vals = {float(l.split(",")[1]) for l in text.strip().splitlines()[1:]}
    assert vals == {0.1, 0.1 ** 2, 0.1 ** 3, 0.1 ** 4}


@pytest.mark.parametrize("name", [n for n in PRESETS if n != "mobilenetv2-adju"])
def test_presets_non_increasing(name):
    epochs, _ = CLOSED_FORMS[name]
    vals = [lr_at(PRESETS[name], e) for e in epochs]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_stagewise_monotone_within_stages():
    spec = PRESETS["mobilenetv2-adju"]
    for start in (0, 50, 100):
        vals = [lr_at(spec, e) for e in range(start, start + 50)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
    # each new stage restarts from its own, higher initial rate
    assert lr_at(spec, 50) > lr_at(spec, 49)


@given(st.integers(0, 40), st.integers(41, 90), st.floats(0.5, 12), st.floats(1e-3, 1.0))
def test_polynomial_properties(e_s, e_f, rho, l0):
    spec = ScheduleSpec("polynomial", l0=l0, e_start=e_s, e_final=e_f, power=rho)
    assert lr_at(spec, e_s) == l0
    assert lr_at(spec, e_f) == 0.0
    vals = [lr_at(spec, e) for e in range(e_s, e_f + 3)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert lr_at(spec, e_s + 1) == lr_at(spec, e_s + 1)
