import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from breathtda.features import (
    CLASSIC_NAMES,
    FeatureConfig,
    FeatureError,
    FeatureMatrix,
    build_windows,
    classic_features,
    feature_names,
    featurize_record,
    map_stage,
    normalize_set,
    sample_entropy,
    tda_features,
    window_features,
)
from breathtda.persistence import sublevel_pd0
from breathtda.respiration import RESP_BAND_HZ
from breathtda.signal import TimeSeries, butter_bandpass

FS = 25.0


def sinusoid(n_epochs, freq=0.25, amp=1.0, fs=FS):
    t = np.arange(int(n_epochs * 30 * fs)) / fs
    return TimeSeries(amp * np.sin(2 * np.pi * freq * t), fs)


def brute_sampen(x, m, r):
    def count(mm):
        n = len(x) - m  # same template count for both lengths
        tpl = [x[i : i + mm] for i in range(n)]
        return sum(
            np.max(np.abs(tpl[i] - tpl[j])) <= r for i in range(n) for j in range(i + 1, n)
        )

    return count(m), count(m + 1)


class TestNames:
    def test_lengths_and_order(self):
        assert len(feature_names("tda")) == 78
        assert len(feature_names("cla")) == len(CLASSIC_NAMES) == 16
        assert feature_names("all") == feature_names("cla") + feature_names("tda")
        assert len(set(feature_names("all"))) == 94

    def test_alias_and_unknown(self):
        assert normalize_set("ntda") == "cla"
        with pytest.raises(FeatureError):
            normalize_set("bogus")

    def test_h1_source_switch_renames(self):
        a = feature_names("tda", FeatureConfig(rips_h1_source="airflow"))
        assert any(n.startswith("ps_rips1_air.") for n in a)
        with pytest.raises(FeatureError):
            FeatureConfig(rips_h1_source="x")

    def test_stage_map(self):
        assert [map_stage(s) for s in ("W", "R", "N1", "N2", "N3")] == ["Wake", "REM", "NREM", "NREM", "NREM"]
        with pytest.raises(FeatureError):
            map_stage("N4")


class TestWindows:
    def test_count_labels_and_timing(self):
        stages = ["W"] * 5 + ["N1", "N2", "R", "W", "N3"]
        ws = build_windows(sinusoid(10), stages)
        assert [w.epoch_index for w in ws] == list(range(6, 11))
        assert [w.stage for w in ws] == ["NREM", "NREM", "REM", "Wake", "NREM"]
        for w in ws:
            assert w.airflow_window.start_time_s == pytest.approx(30 * (w.epoch_index - 6))
            assert len(w.airflow_window) == int(180 * FS)
            assert len(w.irr_window) == 720
            assert w.valid

    def test_too_short_and_mismatch(self):
        with pytest.raises(FeatureError):
            build_windows(sinusoid(5), ["W"] * 5)
        with pytest.raises(FeatureError):
            build_windows(sinusoid(8), ["W"] * 7)

    def test_constant_airflow_is_invalid(self):
        air = TimeSeries(np.zeros(int(8 * 30 * FS)), FS)
        ws = build_windows(air, ["W"] * 8)
        assert not any(w.valid for w in ws)
        assert not tda_features(ws[0]).valid
        assert not classic_features(ws[0]).valid
        assert np.all(np.isnan(window_features(ws[0], "all").values))


@pytest.fixture(scope="module")
def window():
    return build_windows(sinusoid(6, amp=1.0), ["N2"] * 6)[0]


class TestTda:
    def test_length_and_finite(self, window):
        fv = tda_features(window)
        assert fv.valid and fv.values.size == 78
        assert np.all(np.isfinite(fv.values))

    def test_sinusoid_sublevel_lifespans(self, window):
        air = butter_bandpass(window.airflow_window, *RESP_BAND_HZ, 3)
        pd = sublevel_pd0(air)
        life = pd.deaths[np.isfinite(pd.deaths)] - pd.births[np.isfinite(pd.deaths)]
        assert abs(life.mean() - 2.0) < 0.2
        fv = dict(zip(feature_names("tda"), tda_features(window).values))
        assert abs(fv["ps_sub_air.mean_life"] - 2.0) < 0.2

    def test_amplitude_scaling(self, window):
        big = build_windows(sinusoid(6, amp=3.0), ["N2"] * 6)[0]
        a = dict(zip(feature_names("tda"), tda_features(window).values))
        b = dict(zip(feature_names("tda"), tda_features(big).values))
        for k in a:
            if k.startswith(("ps_sub_irr", "hepc_sub_irr", "ps_rips1_irr")):
                assert b[k] == pytest.approx(a[k], rel=1e-9, abs=1e-9), k
        assert b["ps_sub_air.mean_life"] == pytest.approx(3 * a["ps_sub_air.mean_life"], rel=1e-6)

    def test_deterministic(self, window):
        a = tda_features(window).values
        b = tda_features(window).values
        assert a.tobytes() == b.tobytes()


class TestClassic:
    def test_regular_breathing(self):
        w = build_windows(sinusoid(6, freq=0.25), ["W"] * 6)[0]
        v = dict(zip(CLASSIC_NAMES, classic_features(w).values))
        # onsets come from filtered, interpolated crossings: microsecond jitter
        assert v["bi_std"] == pytest.approx(0.0, abs=1e-4)
        assert v["irr_range"] == pytest.approx(0.0, abs=1e-4)

    def test_peak_frequency_and_ratios(self):
        w = build_windows(sinusoid(6, freq=0.3), ["W"] * 6)[0]
        v = dict(zip(CLASSIC_NAMES, classic_features(w).values))
        assert abs(v["spec_peak_hz"] - 0.3) <= 1 / 180
        ratios = [v[n] for n in CLASSIC_NAMES if n.startswith("band_")]
        assert sum(ratios) == pytest.approx(1.0, abs=1e-9)
        assert v["sqi"] == pytest.approx(w.sqi)


class TestSampleEntropy:
    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=5, max_size=40))
    def test_against_brute_force(self, xs):
        x = np.array(xs, dtype=float)
        b, a = brute_sampen(x, 2, 0.2 * x.std())
        got = sample_entropy(x)
        if a and b:
            assert got == pytest.approx(-math.log(a / b))
        else:
            n = x.size - 2
            assert got == pytest.approx(math.log(n * (n - 1) / 2))

    def test_short(self):
        assert sample_entropy(np.array([1.0, 2.0])) == 0.0


class TestMatrix:
    def test_featurize_select_concat(self):
        air = sinusoid(8)
        fm = featurize_record("s1", air, ["W"] * 8, "all")
        assert len(fm) == 3 and fm.values.shape == (3, 94)
        assert np.all(fm.valid)
        cla = fm.select(feature_names("cla"))
        np.testing.assert_array_equal(cla.values, featurize_record("s1", air, ["W"] * 8, "cla").values)
        both = FeatureMatrix.concat([fm, fm.take(np.array([0]))])
        assert len(both) == 4
        with pytest.raises(FeatureError):
            FeatureMatrix.concat([fm, cla])
        with pytest.raises(FeatureError):
            fm.select(["nope"])
