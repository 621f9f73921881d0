import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graph_bendr.eeg.io import FormatError, load_recording, read_task, recording_to_bytes, save_recording, write_task
from graph_bendr.eeg.montage import default_montage, load_montage, save_montage
from graph_bendr.eeg.preprocess import resample, select_channels, window, zscore
from graph_bendr.eeg.synth import TaskSpec, generate_pretrain_corpus, generate_task, lagged_correlation
from graph_bendr.eeg.types import Electrode, Montage, Recording, ValidationError

STANDARD_19 = ["Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2"]


@pytest.fixture(scope="module")
def montage():
    return default_montage()


def rec(samples, labels=None, sfreq=256.0):
    samples = np.asarray(samples)
    labels = labels or [f"ch{i}" for i in range(samples.shape[0])]
    return Recording(tuple(labels), sfreq, samples, "s0")


# -- montage -----------------------------------------------------------------

def test_default_montage_is_standard_19(montage):
    assert montage.labels == STANDARD_19
    assert montage.radius == 1.0
    norms = np.linalg.norm(montage.coords, axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-6)


def test_montage_rejects_off_sphere_and_duplicates():
    with pytest.raises(ValidationError):
        Montage("bad", [Electrode("a", 1, 0, 0), Electrode("b", 0, 1.1, 0)])
    with pytest.raises(ValidationError):
        Montage("bad", [Electrode("a", 1, 0, 0), Electrode("a", 0, 1, 0)])
    with pytest.raises(ValidationError):
        Montage("bad", [Electrode("a", 1, 0, 0)])


def test_montage_file_roundtrip(tmp_path, montage):
    save_montage(montage, tmp_path / "m.json")
    again = load_montage(tmp_path / "m.json")
    assert again.labels == montage.labels
    assert np.array_equal(again.coords, montage.coords)


# -- resample ----------------------------------------------------------------

def test_resample_identity_is_bit_identical():
    r = rec(np.random.default_rng(0).standard_normal((3, 100)))
    out = resample(r, 256.0)
    assert np.array_equal(out.samples, r.samples) and out.sfreq == 256.0


def test_resample_constant_is_fixed_point():
    r = rec(np.full((2, 320), 3.0), sfreq=160.0)
    out = resample(r, 256.0)
    assert out.n_samples == round(320 * 1.6)
    np.testing.assert_allclose(out.samples, 3.0, atol=1e-9)


def test_resample_sinusoid_matches_analytic():
    t = np.arange(320) / 160.0
    r = rec(np.sin(2 * np.pi * 10 * t)[None], sfreq=160.0)
    out = resample(r, 256.0)
    tt = np.arange(out.n_samples) / 256.0
    err = np.abs(out.samples[0] - np.sin(2 * np.pi * 10 * tt))
    assert err[16:-16].max() < 0.05


@pytest.mark.parametrize("f,g", [(256.0, 160.0), (200.0, 256.0), (100.0, 100.0 * np.pi)])
def test_resample_roundtrip_correlation(f, g):
    rng = np.random.default_rng(1)
    T = 2000
    t = np.arange(T) / f
    top = 0.4 * min(f, g)
    freqs = rng.uniform(0.5, top * 0.9, size=6)
    x = sum(np.sin(2 * np.pi * fr * t + rng.uniform(0, 6)) for fr in freqs)[None]
    back = resample(resample(rec(x, sfreq=f), g), f)
    n = min(T, back.n_samples)
    assert np.corrcoef(x[0, :n], back.samples[0, :n])[0, 1] > 0.99


def test_resample_rejects_non_positive_target():
    with pytest.raises(ValidationError):
        resample(rec(np.zeros((1, 10))), 0.0)


def test_recording_rejects_non_finite():
    bad = np.zeros((1, 10))
    bad[0, 3] = np.nan
    with pytest.raises(ValidationError):
        rec(bad)


# -- select_channels ---------------------------------------------------------

def test_select_channels_orders_and_drops(montage):
    rng = np.random.default_rng(2)
    labels = list(reversed(STANDARD_19)) + ["EKG", "A1"]
    r = rec(rng.standard_normal((21, 50)), labels)
    out = select_channels(r, montage)
    assert list(out.channel_labels) == STANDARD_19
    for i, lab in enumerate(STANDARD_19):
        assert np.array_equal(out.samples[i], r.samples[labels.index(lab)])


def test_select_channels_identity_and_idempotent(montage):
    r = rec(np.random.default_rng(3).standard_normal((19, 40)), STANDARD_19)
    assert select_channels(r, montage) is r
    once = select_channels(rec(r.samples, [l.upper() for l in STANDARD_19]), montage)
    twice = select_channels(once, montage)
    assert np.array_equal(once.samples, twice.samples) and once.channel_labels == twice.channel_labels


def test_select_channels_synonyms(montage):
    labels = [{"T3": "T7", "T4": "T8", "T5": "P7", "T6": "P8"}.get(l, l) for l in STANDARD_19]
    r = rec(np.arange(19 * 4, dtype=float).reshape(19, 4), labels)
    out = select_channels(r, montage)
    assert np.array_equal(out.samples, r.samples)


def test_select_channels_missing_names_label(montage):
    labels = [l for l in STANDARD_19 if l != "Cz"]
    with pytest.raises(ValidationError, match="Cz"):
        select_channels(rec(np.zeros((18, 5)), labels), montage)


# -- window ------------------------------------------------------------------

@pytest.mark.parametrize("T,expected", [(30, 3), (37, 3), (9, 0)])
def test_window_tiling(T, expected):
    r = rec(np.arange(T, dtype=float)[None], sfreq=10.0)
    ws = window(r, 1.0)
    assert len(ws) == expected
    for k, w in enumerate(ws):
        assert w.source == ("s0", 10 * k)
        assert np.array_equal(w.samples[0], np.arange(10 * k, 10 * k + 10))


@given(T=st.integers(1, 500), L=st.integers(1, 60))
def test_window_never_overlaps_or_overruns(T, L):
    r = rec(np.zeros((1, T)), sfreq=1.0)
    ws = window(r, float(L))
    offsets = [w.source[1] for w in ws]
    assert all(b - a == L for a, b in zip(offsets, offsets[1:]))
    assert all(o + L <= T for o in offsets)
    assert len(ws) == T // L


def test_zscore_unit_variance():
    x = np.random.default_rng(4).normal(5, 3, size=(3, 1000))
    z = zscore(rec(x)).samples
    np.testing.assert_allclose(z.mean(1), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(1), 1, atol=1e-12)


# -- persistence -------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(0, 20)), elements=st.floats(-1e6, 1e6, width=32)))
def test_recording_roundtrip_bit_exact(tmp_path_factory, x):
    path = tmp_path_factory.mktemp("rt") / "r.eeg"
    r = Recording(tuple(f"c{i}" for i in range(x.shape[0])), 173.5, x, "subj")
    save_recording(r, path)
    back = load_recording(path)
    assert back.channel_labels == r.channel_labels and back.sfreq == r.sfreq and back.subject_id == "subj"
    assert back.samples.tobytes() == x.astype("<f4").tobytes()


def test_load_rejects_truncated_payload(tmp_path):
    path = tmp_path / "r.eeg"
    path.write_bytes(recording_to_bytes(rec(np.ones((2, 8), dtype=np.float32)))[:-4])
    with pytest.raises(FormatError, match="payload size mismatch"):
        load_recording(path)


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "r.eeg"
    path.write_bytes(b"EEGREC02" + recording_to_bytes(rec(np.ones((1, 2), dtype=np.float32)))[8:])
    with pytest.raises(FormatError):
        load_recording(path)


def test_load_rejects_malformed_header(tmp_path):
    path = tmp_path / "r.eeg"
    blob = b"{not json"
    path.write_bytes(b"EEGREC01" + len(blob).to_bytes(4, "little") + blob)
    with pytest.raises(FormatError, match="malformed header"):
        load_recording(path)


# -- generators --------------------------------------------------------------

def test_pretrain_corpus_deterministic(montage):
    a = generate_pretrain_corpus(1, 2, montage, 4.0, 256.0)
    b = generate_pretrain_corpus(1, 2, montage, 4.0, 256.0)
    c = generate_pretrain_corpus(2, 2, montage, 4.0, 256.0)
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a, b))
    assert any(x.samples.tobytes() != y.samples.tobytes() for x, y in zip(a, c))


def test_pretrain_corpus_statistics(montage):
    (r,) = generate_pretrain_corpus(3, 1, montage, 60.0, 256.0)
    assert r.samples.shape == (19, 60 * 256)
    means = r.samples.astype(np.float64).mean(axis=1)
    assert np.all(np.abs(means) < 0.1)
    np.testing.assert_allclose(r.samples.std(axis=1), 1.0, atol=1e-5)


def test_pretrain_corpus_neighbours_correlate_more(montage):
    (r,) = generate_pretrain_corpus(4, 1, montage, 60.0, 256.0)
    c = np.corrcoef(r.samples)
    i = montage.index
    assert abs(c[i("C3"), i("Cz")]) > abs(c[i("C3"), i("O2")])


def test_task_determinism_and_balance(montage):
    spec = TaskSpec(num_windows=100, folds=4)
    a = generate_task(5, montage, spec)
    b = generate_task(5, montage, spec)
    assert a.fold_assignment == b.fold_assignment
    assert all(x.samples.tobytes() == y.samples.tobytes() and x.label == y.label for x, y in zip(a.windows, b.windows))
    assert (a.labels == 1).sum() == 50 and (a.labels == 0).sum() == 50
    assert a.balanced


def test_task_imbalanced_counts(montage):
    ds = generate_task(6, montage, TaskSpec(num_windows=200, class_balance=0.3, metric="auroc"))
    assert (ds.labels == 1).sum() == 60 and (ds.labels == 0).sum() == 140
    assert not ds.balanced


def test_task_folds_stratified(montage):
    ds = generate_task(7, montage, TaskSpec(num_windows=100, folds=4))
    folds = np.asarray(ds.fold_assignment)
    for f in range(4):
        counts = np.bincount(ds.labels[folds == f], minlength=2)
        assert counts.min() >= 12


def test_task_missing_pair_channel(montage):
    with pytest.raises(ValidationError):
        generate_task(0, montage, TaskSpec(coupled_pair=("C3", "Xx")))


def test_planted_lag_correlation_separates_classes(montage):
    spec = TaskSpec(num_windows=200)
    ds = generate_task(8, montage, spec)
    a, b = montage.index(spec.coupled_pair[0]), montage.index(spec.coupled_pair[1])
    lag = round(spec.lag_s * spec.sfreq)
    corr = np.array([lagged_correlation(w.samples[a], w.samples[b], lag) for w in ds.windows])
    pos, neg = corr[ds.labels == 1], corr[ds.labels == 0]
    assert pos.mean() >= 0.6
    assert neg.mean() <= 0.2
    assert pos.mean() - neg.mean() >= 0.4


def test_task_marginals_do_not_reveal_label(montage):
    """Per-channel power spectra of the two classes agree, so no single channel carries the label."""
    ds = generate_task(9, montage, TaskSpec(num_windows=200))
    spec = np.abs(np.fft.rfft(ds.stack(), axis=-1)) ** 2
    y = ds.labels
    for ch in (montage.index("C3"), montage.index("C4")):
        p1 = spec[y == 1, ch].mean(0)
        p0 = spec[y == 0, ch].mean(0)
        band = slice(8 * 2, 12 * 2 + 1)  # 0.5 Hz bins over 2 s windows
        assert abs(p1[band].sum() / p0[band].sum() - 1) < 0.15


def test_task_manifest_roundtrip(tmp_path, montage):
    ds = generate_task(10, montage, TaskSpec(num_windows=16, folds=2, window_s=1.0))
    write_task(ds, tmp_path / "t")
    back = read_task(tmp_path / "t")
    assert back.fold_assignment == ds.fold_assignment and back.metric == ds.metric
    assert all(x.samples.tobytes() == y.samples.tobytes() and x.key == y.key for x, y in zip(ds.windows, back.windows))
    doc = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert set(doc) >= {"windows", "metric", "folds"}
