import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from fluxsampler import circuit
from fluxsampler.waveforms import (
    ExpSettlingModel, FluxWaveform, ModelError, WaveformConfig, WaveformError, angle_sweep_family,
    apply_settling, dac_output, gaussian_kernel, gaussian_lowpass, make_step, predistort,
    zoh_resample,
)

FIG3 = ExpSettlingModel(((0.48, 0.73), (0.04, 7.9), (0.01, 53.5)))


def unit_step(rate=10e9, n_pre=20, n=4000):
    return FluxWaveform(rate, np.r_[np.zeros(n_pre), np.ones(n - n_pre)])


@st.composite
def models(draw, max_terms=3):
    k = draw(st.integers(1, max_terms))
    alphas = draw(st.lists(st.floats(-0.3, 0.3), min_size=k, max_size=k))
    if sum(abs(a) for a in alphas) >= 0.95:
        alphas = [a * 0.9 / sum(abs(a) for a in alphas) for a in alphas]
    taus = draw(st.lists(st.floats(0.2, 80.0), min_size=k, max_size=k))
    return ExpSettlingModel(tuple(zip(alphas, taus)))


def test_make_step_levels():
    wf = make_step(0.08, 0.31, 100.0, 200.0)
    assert np.all(wf.samples[wf.times < 100] == 0.08)
    assert np.all(wf.samples[wf.times >= 100] == 0.31)
    flat = make_step(0.2, 0.2, 10.0, 50.0)
    assert np.all(flat.samples == 0.2)
    with pytest.raises(WaveformError):
        make_step(0.08, 0.6, 100.0, 200.0)


def test_waveform_config_validation():
    with pytest.raises(WaveformError):
        WaveformConfig(awg_rate=-1.0)
    with pytest.raises((WaveformError, ModelError)):
        ExpSettlingModel(((0.6, 1.0), (0.5, 2.0)))
    with pytest.raises((WaveformError, ModelError)):
        ExpSettlingModel(((0.1, -1.0),))


def test_gaussian_constant_identity():
    wf = FluxWaveform(10e9, np.full(500, 0.17))
    assert np.max(np.abs(gaussian_lowpass(wf, 220e6).samples - 0.17)) < 1e-15


def test_gaussian_rise_time():
    out = gaussian_lowpass(unit_step(40e9, 400, 4400), 220e6).samples
    rise = (np.argmax(out >= 0.9) - np.argmax(out >= 0.1)) / 40.0
    assert rise == pytest.approx(0.34 / 0.22, rel=0.05)
    # numerical convolution of the truncated kernel as an independent check
    k = gaussian_kernel(220e6, 40e9)
    x = np.r_[np.zeros(400), np.ones(4000)]
    ref = np.convolve(np.pad(x, (k.size // 2, k.size // 2), mode="edge"), k, mode="valid")
    assert np.max(np.abs(ref - out)) < 1e-12


def test_gaussian_minus_3db_at_cutoff():
    rate, fc = 10e9, 220e6
    n = 20000
    t = np.arange(n) / rate
    wf = FluxWaveform(rate, np.sin(2 * np.pi * fc * t))
    out = gaussian_lowpass(wf, fc).samples[2000:-2000]
    spec_in = np.abs(np.fft.rfft(wf.samples[2000:-2000]))
    spec_out = np.abs(np.fft.rfft(out))
    i = np.argmax(spec_in)
    assert spec_out[i] / spec_in[i] == pytest.approx(1 / np.sqrt(2), rel=0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-0.3, 0.3), min_size=2, max_size=12), st.floats(50e6, 1e9))
def test_gaussian_no_overshoot_on_monotone(levels, cutoff):
    levels = np.sort(levels)
    x = np.repeat(levels, 40)
    out = gaussian_lowpass(FluxWaveform(10e9, x), cutoff).samples
    assert np.all(np.diff(out) >= -1e-12)
    assert out.min() >= levels[0] - 1e-12 and out.max() <= levels[-1] + 1e-12


def test_gaussian_preserves_dc():
    k = gaussian_kernel(220e6, 10e9)
    assert abs(k.sum() - 1) < 1e-14


def test_settling_step_response_values():
    out = apply_settling(unit_step(), FIG3).samples
    assert out[20] == pytest.approx(0.47, abs=1e-12)
    assert out[-1] == pytest.approx(1.0, abs=1e-3)
    single = ExpSettlingModel(((0.3, 4.0),))
    wf = unit_step(10e9, 20, 400)
    assert apply_settling(wf, single).samples[20 + 40] == pytest.approx(1 - 0.3 / np.e, abs=1e-12)


def test_empty_model_identity():
    wf = make_step(0.08, 0.31, 10.0, 60.0)
    empty = ExpSettlingModel(())
    assert np.array_equal(apply_settling(wf, empty).samples, wf.samples)
    assert np.array_equal(predistort(wf, empty).samples, wf.samples)


@settings(max_examples=100, deadline=None)
@given(models())
def test_settling_matches_closed_form(model):
    wf = unit_step(10e9, 20, 3000)
    out = apply_settling(wf, model).samples
    t = (np.arange(out.size) - 20) / 10.0
    expected = np.where(t >= 0, model.step_response(np.maximum(t, 0)), 0.0)
    assert np.max(np.abs(out - expected)) < 1e-6


@settings(max_examples=50, deadline=None)
@given(models(), st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_settling_linear(model, seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 500))
    f = lambda v: apply_settling(FluxWaveform(10e9, v), model).samples
    lhs = f(a * x + b * y)
    rhs = a * f(x) + b * f(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(np.max(np.abs(rhs)), 1.0)


@settings(max_examples=100, deadline=None)
@given(models(), st.integers(0, 2**31 - 1))
def test_predistort_round_trip(model, seed):
    x = np.random.default_rng(seed).normal(size=600)
    wf = FluxWaveform(10e9, x)
    back = apply_settling(predistort(wf, model), model).samples
    scale = np.max(np.abs(x))
    assert np.max(np.abs(back[2:] - x[2:])) <= 1e-6 * scale


def test_predistort_fig3_step_residual():
    wf = make_step(0.08, 0.31, 10.0, 400.0, WaveformConfig(awg_rate=20e9))
    out = apply_settling(predistort(wf, FIG3), FIG3)
    after = out.times >= 12.0
    assert np.max(np.abs(out.samples[after] - 0.31)) < 1e-3 * 0.23


def test_predistort_single_term_overshoot():
    m = ExpSettlingModel(((0.48, 0.73),))
    pd = predistort(unit_step(10e9, 10, 200), m).samples
    assert pd[10] - 1 == pytest.approx(0.48 / (1 - 0.48), rel=1e-9)


def test_settling_filter_against_scipy():
    from fluxsampler.waveforms import settling_filter
    b, a = settling_filter(FIG3, 10e9)
    x = np.r_[np.zeros(5), np.ones(300)]
    ref = sps.lfilter(b, a, x)
    assert np.max(np.abs(ref - apply_settling(FluxWaveform(10e9, x), FIG3).samples)) < 1e-9


def test_zoh_and_dac_output():
    wf = make_step(0.0, 0.2, 5.0, 20.0)
    fine = zoh_resample(wf, 10e9)
    assert fine.sample_rate == 10e9 and len(fine) == 10 * len(wf)
    assert np.all(fine.samples[:50] == 0.0) and np.all(fine.samples[50:] == 0.2)
    out = dac_output(wf, 10e9)
    assert out.samples[-1] == pytest.approx(0.2, abs=1e-9)


def test_angle_sweep_family():
    p = circuit.CircuitParams()
    fam = angle_sweep_family(p, 16, 0.08, 180.0)
    assert len(fam) == 16
    start = [circuit.reflection_angle(w.samples[0], p) for w in fam]
    assert max(start) - min(start) >= 180 - 1e-6
    assert all(w.samples[-1] == pytest.approx(0.08) for w in fam)
    one = angle_sweep_family(p, 1, 0.08, 180.0)
    assert len(one) == 1 and one[0].samples[0] == 0.0
    with pytest.raises(WaveformError):
        angle_sweep_family(p, 16, 0.08, 300.0)
