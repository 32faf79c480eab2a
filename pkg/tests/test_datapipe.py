import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detect.datapipe import (
    ACTIVITIES,
    PHASES,
    PLACEMENTS,
    NormStats,
    SensorRecording,
    Window,
    WindowSet,
    apply_norm,
    build_windows,
    expected_window_count,
    fit_norm_stats,
    kfold,
    load_recordings,
    load_windows,
    read_nrs_table,
    read_recording,
    save_windows,
    segment,
    stratified_split,
    trim,
    write_recording,
)
from detect.errors import ContractError, IngestionError, PreprocessingError, SplitError


def _rec(n, rate=100.0, activity="walk", patient="p1", phase="pre", trial=0, fill=None):
    samples = np.arange(n * 6, dtype=float).reshape(n, 6) if fill is None else fill
    return SensorRecording(patient, phase, activity, "nondominant_hand", rate, samples, None, trial)


def _windowset(per_class, n=4, seed=0):
    rng = np.random.default_rng(seed)
    windows = []
    for c, count in enumerate(per_class):
        for i in range(count):
            src = ("p", "pre", ACTIVITIES[c], "pant_pocket", i // 5, i)
            windows.append(Window(rng.normal(size=(n, 6)), c, src))
    return WindowSet.from_windows(windows)


# ingestion ------------------------------------------------------------------

def test_read_thirty_second_file(tmp_path):
    path = tmp_path / "p1_pre_walk_nondominant_hand_1.csv"
    write_recording(_rec(3000), path)
    rec = read_recording(path)
    assert rec.duration_s == pytest.approx(30.0)
    assert rec.samples.shape == (3000, 6)
    assert rec.trial == 1


def test_round_trip_values(tmp_path, rng):
    original = _rec(50, fill=np.round(rng.normal(size=(50, 6)), 6))
    write_recording(original, tmp_path / "r_0.csv")
    back = read_recording(tmp_path / "r_0.csv")
    np.testing.assert_array_equal(back.samples, original.samples)
    assert (back.patient_id, back.phase, back.activity) == ("p1", "pre", "walk")


def test_nan_value_is_rejected_with_row_number(tmp_path):
    path = tmp_path / "bad_0.csv"
    write_recording(_rec(20), path)
    lines = path.read_text().splitlines()
    fields = lines[3 + 7].split(",")
    fields[2] = "nan"
    lines[3 + 7] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError, match=r"bad_0\.csv:11:.*ay"):
        read_recording(path)


@pytest.mark.parametrize("mutate, pattern", [
    (lambda ls: ls.__setitem__(1, "p1,pre,jog,pant_pocket,100"), "unknown activity"),
    (lambda ls: ls.__setitem__(1, "p1,during,walk,pant_pocket,100"), "unknown phase"),
    (lambda ls: ls.__setitem__(2, "t,ax,ay,az,gx,gy"), "missing"),
    (lambda ls: ls.__setitem__(5, "0.1,1,2,x,4,5,6"), ":6: non-numeric az"),
    (lambda ls: ls.__setitem__(1, "p1,pre,walk,pant_pocket,200"), "unsupported sample rate"),
])
def test_malformed_files(tmp_path, mutate, pattern):
    path = tmp_path / "m_0.csv"
    write_recording(_rec(10), path)
    lines = path.read_text().splitlines()
    mutate(lines)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(IngestionError, match=pattern):
        read_recording(path)


def test_activity_alias_folds_upstairs(tmp_path):
    path = tmp_path / "a_0.csv"
    write_recording(_rec(10), path)
    text = path.read_text().replace("p1,pre,walk", "p1,pre,upstairs")
    path.write_text(text)
    assert read_recording(path).activity == "stairs"


def test_directory_of_48_recordings(tmp_path):
    count = 0
    for patient in ("a", "b"):
        for phase in PHASES:
            for activity in ACTIVITIES:
                for placement in PLACEMENTS:
                    for trial in range(2):
                        rec = SensorRecording(patient, phase, activity, placement, 50.0,
                                              np.zeros((10, 6)), None, trial)
                        write_recording(rec, tmp_path / f"{patient}_{phase}_{activity}_{placement}_{trial}.csv")
                        count += 1
    (tmp_path / "nrs.csv").write_text("patient_id,nrs_pre,nrs_post\na,5,1\n")
    recs = load_recordings(tmp_path)
    assert count == len(recs) == 48
    assert len({(r.patient_id, r.phase, r.activity, r.placement, r.trial) for r in recs}) == 48


def test_nrs_table(tmp_path):
    path = tmp_path / "nrs.csv"
    path.write_text("patient_id,nrs_pre,nrs_post\n12345,5,1\n51000,3,2\n")
    assert read_nrs_table(path) == {"12345": (5, 1), "51000": (3, 2)}
    path.write_text("patient_id,nrs_pre,nrs_post\n12345,5,11\n")
    with pytest.raises(IngestionError, match=":2:"):
        read_nrs_table(path)


# trim / segment -------------------------------------------------------------

@pytest.mark.parametrize("n, rate, expected", [(3000, 100.0, 2500), (1500, 50.0, 1250)])
def test_trim(n, rate, expected):
    rec = _rec(n, rate)
    out = trim(rec)
    assert len(out.samples) == expected
    cut = (n - expected) // 2
    np.testing.assert_array_equal(out.samples[0], rec.samples[cut])


def test_trim_too_short():
    with pytest.raises(PreprocessingError):
        trim(_rec(400))
    with pytest.raises(PreprocessingError):
        trim(_rec(500))


@pytest.mark.parametrize("n, expected", [(2500, 49), (100, 1), (149, 1), (150, 2), (99, 0)])
def test_segment_counts(n, expected):
    assert len(segment(_rec(n))) == expected


def test_segment_starts_and_content():
    rec = _rec(400)
    windows = segment(rec, label=2)
    for i, w in enumerate(windows):
        assert w.source[-1] == 50 * i
        assert w.label == 2
        np.testing.assert_array_equal(w.values, rec.samples[50 * i : 50 * i + 100])


def test_thirty_second_trial_gives_49_windows():
    assert len(build_windows([_rec(3000)])) == 49
    assert expected_window_count(30.0, 100.0) == 49


@settings(max_examples=200, deadline=None)
@given(st.floats(0.5, 40.0), st.sampled_from([50.0, 100.0]))
def test_window_count_closed_form(duration, rate):
    n = int(round(duration * rate))
    cut = int(round(2.5 * rate))
    remaining = n - 2 * cut
    oracle = math.floor((remaining - 100) / 50) + 1 if remaining >= 100 else 0
    assert expected_window_count(duration, rate) == oracle
    ws = build_windows([_rec(n, rate, fill=np.zeros((n, 6)))])
    assert len(ws) == oracle


def test_build_windows_skips_short_recordings(caplog):
    ws = build_windows([_rec(300), _rec(3000, activity="sit")])
    assert len(ws) == 49 and set(ws.labels) == {0}
    assert "skipping" in caplog.text


# normalisation --------------------------------------------------------------

def test_constant_channel_std_is_floored():
    values = np.full((3, 100, 6), 9.81)
    stats = fit_norm_stats(WindowSet(values, [0, 1, 2], [("p",)] * 3))
    np.testing.assert_allclose(stats.mean, 9.81)
    np.testing.assert_array_equal(stats.std, 1e-8)


def test_symmetric_channel():
    values = np.ones((2, 100, 6))
    values[1] = -1
    stats = fit_norm_stats(WindowSet(values, [0, 0], [("a",), ("b",)]))
    np.testing.assert_array_equal(stats.mean, 0.0)
    np.testing.assert_array_equal(stats.std, 1.0)


def test_stats_match_two_pass_oracle(rng):
    ws = WindowSet(rng.normal(3, 2, size=(7, 10, 6)), [0] * 7, [("s",)] * 7)
    stats = fit_norm_stats(ws)
    for c in range(6):
        vals = [float(v) for v in ws.values[:, :, c].ravel()]
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert stats.mean[c] == pytest.approx(mean, rel=1e-12)
        assert stats.std[c] == pytest.approx(math.sqrt(var), rel=1e-12)


def test_self_normalisation_and_identity(rng):
    ws = WindowSet(rng.normal(5, 3, size=(20, 10, 6)), [0] * 20, [("s",)] * 20)
    normed = apply_norm(ws, fit_norm_stats(ws))
    flat = normed.values.reshape(-1, 6)
    np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(flat.std(axis=0), 1, atol=1e-12)
    ident = apply_norm(ws, NormStats(np.zeros(6), np.ones(6)))
    np.testing.assert_array_equal(ident.values, ws.values)


def test_double_normalisation_rejected(rng):
    ws = WindowSet(rng.normal(size=(2, 4, 6)), [0, 0], [("a",), ("b",)])
    stats = fit_norm_stats(ws)
    with pytest.raises(ContractError):
        apply_norm(apply_norm(ws, stats), stats)


def test_test_set_uses_train_stats(rng):
    train = WindowSet(rng.normal(0, 1, size=(30, 10, 6)), [0] * 30, [("a",)] * 30)
    test = WindowSet(rng.normal(2, 1, size=(30, 10, 6)), [0] * 30, [("b",)] * 30)
    stats = fit_norm_stats(train)
    before = stats.fingerprint()
    normed = apply_norm(test, stats)
    assert stats.fingerprint() == before
    assert normed.norm_stats.fingerprint() == before
    assert np.all(normed.values.reshape(-1, 6).mean(axis=0) > 1.0)


# splits ---------------------------------------------------------------------

def _source_set(ws):
    return set(ws.sources)


def test_split_divisible_case():
    tr, va = stratified_split(_windowset([100, 100, 100]), 0.8, seed=1)
    assert tr.class_counts().tolist() == [80, 80, 80]
    assert va.class_counts().tolist() == [20, 20, 20]


def test_split_rounding_rule():
    tr, va = stratified_split(_windowset([5, 7, 2]), 0.8, seed=1)
    assert tr.class_counts().tolist() == [4, 6, 1]
    assert va.class_counts().tolist() == [1, 1, 1]


def test_split_needs_two_windows_per_class():
    with pytest.raises(SplitError, match="stairs"):
        stratified_split(_windowset([5, 5, 1]), 0.8, seed=1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(2, 40), min_size=3, max_size=3), st.floats(0.1, 0.9),
       st.integers(0, 2**31))
def test_split_is_partition_with_bounded_counts(counts, frac, seed):
    ws = _windowset(counts)
    tr, va = stratified_split(ws, frac, seed)
    assert _source_set(tr).isdisjoint(_source_set(va))
    assert _source_set(tr) | _source_set(va) == _source_set(ws)
    for c, n in enumerate(counts):
        assert abs(tr.class_counts()[c] - round(frac * n)) <= 1


def test_split_determinism():
    ws = _windowset([30, 30, 30])
    a, _ = stratified_split(ws, 0.8, seed=3)
    b, _ = stratified_split(ws, 0.8, seed=3)
    c, _ = stratified_split(ws, 0.8, seed=4)
    assert a.sources == b.sources
    assert a.sources != c.sources
    assert a.class_counts().tolist() == c.class_counts().tolist()


def test_trial_level_split_keeps_trials_together():
    ws = _windowset([40, 40, 40])
    tr, va = stratified_split(ws, 0.8, seed=5, by="trial")
    trials_tr = {s[:5] for s in tr.sources}
    trials_va = {s[:5] for s in va.sources}
    assert trials_tr.isdisjoint(trials_va)
    assert len(trials_va) == 3 * 2  # 8 trials per class, 20% held out


def test_kfold_partition():
    ws = _windowset([50, 50, 50])
    folds = kfold(ws, 5, seed=2)
    assert len(folds) == 5
    seen = set()
    for train, val in folds:
        assert val.class_counts().tolist() == [10, 10, 10]
        assert _source_set(train).isdisjoint(_source_set(val))
        assert len(train) + len(val) == len(ws)
        assert seen.isdisjoint(_source_set(val))
        seen |= _source_set(val)
    assert seen == _source_set(ws)


def test_kfold_proportions_track_global():
    ws = _windowset([23, 41, 12])
    for _, val in kfold(ws, 5, seed=9):
        counts = val.class_counts()
        expected = np.array([23, 41, 12]) / 5
        assert np.all(np.abs(counts - expected) < 1.0 + 1e-12)


def test_kfold_class_too_small():
    with pytest.raises(SplitError):
        kfold(_windowset([10, 10, 4]), 5)


# cache ----------------------------------------------------------------------

def test_window_cache_round_trip(tmp_path):
    ws = _windowset([3, 4, 5])
    ws = apply_norm(ws, fit_norm_stats(ws))
    save_windows(ws, tmp_path / "w.bin")
    back = load_windows(tmp_path / "w.bin")
    assert np.array_equal(back.values, ws.values)
    assert back.labels.tolist() == ws.labels.tolist()
    assert back.sources == ws.sources
    assert back.normalized and back.norm_stats.fingerprint() == ws.norm_stats.fingerprint()
    save_windows(back, tmp_path / "again.bin")
    assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "w.bin").read_bytes()
