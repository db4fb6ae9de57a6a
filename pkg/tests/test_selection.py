import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onsetlab.audio_io import PhraseScore
from onsetlab.errors import DomainError, InfeasiblePhraseError
from onsetlab.evaluation import match_onsets
from onsetlab.selection import (PeakPickConfig, decode_phrases, hamming_kernel, hmm_decode,
                                hmm_decode_frames, hmm_objective, onsets_in_phrases,
                                peak_pick, peak_pick_frames, scaled_durations, smooth)


# ---------------------------------------------------------------------------
# Smoothing

def test_kernel_is_normalised_hamming():
    k = hamming_kernel(5)
    ref = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(5) / 4)
    np.testing.assert_allclose(k, ref / ref.sum())


def test_smooth_constant_and_impulse():
    np.testing.assert_allclose(smooth(np.full(20, 0.3)), 0.3)
    x = np.zeros(21)
    x[10] = 1.0
    np.testing.assert_allclose(smooth(x)[8:13], hamming_kernel(5))
    assert smooth(x)[:8].sum() == 0


def test_smooth_replicates_edges():
    x = np.array([1.0, 0, 0, 0, 0, 0])
    k = hamming_kernel(5)
    assert smooth(x)[0] == pytest.approx(k[0] + k[1] + k[2])


@settings(max_examples=50)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
def test_smooth_stays_in_unit_interval(values):
    out = smooth(values)
    assert out.shape == (len(values),)
    assert np.all((out >= 0) & (out <= 1))


def test_smooth_rejects_empty():
    with pytest.raises(DomainError):
        smooth([])


# ---------------------------------------------------------------------------
# Peak picking

def rule_scan(odf, delta, pre=3, post=3, combine=3):
    accepted = []
    n = len(odf)
    for t in range(n):
        if odf[t] < delta:
            continue
        window = odf[max(0, t - pre):min(n, t + post + 1)]
        if odf[t] != max(window):
            continue
        if any(odf[j] == odf[t] for j in range(max(0, t - pre), t)):
            continue
        if accepted and t - accepted[-1] < combine:
            continue
        accepted.append(t)
    return accepted


def test_peak_pick_matches_rule_scan():
    rng = np.random.default_rng(0)
    for trial in range(200):
        n = int(rng.integers(1, 80))
        # coarse quantisation produces plenty of plateaus and ties
        odf = np.round(rng.random(n) * 8) / 8
        delta = float(rng.choice([0.0, 0.25, 0.5, 0.75]))
        got = peak_pick_frames(odf, PeakPickConfig(delta))
        assert list(got) == rule_scan(odf, delta), (trial, odf, delta)


def test_plateau_keeps_first_frame():
    odf = np.array([0, 0.2, 0.9, 0.9, 0.9, 0.2, 0])
    assert list(peak_pick_frames(odf, PeakPickConfig(0.5))) == [2]


def test_threshold_is_inclusive():
    odf = np.array([0, 0, 0.5, 0, 0])
    assert list(peak_pick(odf, PeakPickConfig(0.5))) == [0.02]
    assert list(peak_pick(odf, PeakPickConfig(0.51))) == []


def test_combine_window():
    odf = np.zeros(30)
    odf[[5, 9, 11, 20]] = [0.9, 0.8, 0.95, 0.7]
    # 9 and 11 lie within the 3-frame max window of each other; 11 wins
    assert list(peak_pick_frames(odf, PeakPickConfig(0.5))) == [5, 11, 20]
    wide = PeakPickConfig(0.5, pre_max=0.01, post_max=0.01, combine=0.1)
    assert list(peak_pick_frames(odf, wide)) == [5, 20]


def test_peak_pick_config_validation():
    with pytest.raises(DomainError):
        PeakPickConfig(0.5, pre_max=-0.01)


# ---------------------------------------------------------------------------
# Score-informed decoding

def brute_force(odf, score):
    n = len(odf)
    k = len(score.syllable_durations)
    means = scaled_durations(score, n)
    scored = [(hmm_objective(odf, (0,) + rest, means), (0,) + rest)
              for rest in itertools.combinations(range(1, n), k - 1)]
    best = max(v for v, _ in scored)
    # among (numerically) tied optima prefer the earliest last onset, then
    # the earliest one before it, as a backward pass does
    tied = [f for v, f in scored if v >= best - 1e-9 * max(1.0, abs(best))]
    return best, min(tied, key=lambda f: f[::-1])


def test_hmm_matches_exhaustive_search():
    rng = np.random.default_rng(1)
    for trial in range(100):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(k, 31))
        odf = rng.random(n)
        if trial % 3 == 0:
            odf[rng.random(n) < 0.5] = 0.0
        score = PhraseScore(0.0, n / 100, tuple(rng.uniform(0.5, 2.0, k)))
        frames = hmm_decode_frames(odf, score)
        best, arg = brute_force(odf, score)
        got = hmm_objective(odf, tuple(frames), scaled_durations(score, n))
        assert got == pytest.approx(best, rel=1e-12, abs=1e-9), trial
        assert tuple(frames) == arg, trial
        assert frames[0] == 0 and np.all(np.diff(frames) > 0) and frames[-1] < n


def test_hmm_finds_clear_peaks():
    odf = np.full(100, 0.01)
    odf[[0, 30, 70]] = 0.99
    score = PhraseScore(1.0, 2.0, (0.3, 0.4, 0.3))
    np.testing.assert_allclose(hmm_decode(odf, score), [1.0, 1.3, 1.7])


def test_hmm_follows_durations_without_evidence():
    odf = np.full(100, 0.5)
    score = PhraseScore(0.0, 1.0, (1.0, 1.0, 2.0))
    assert list(hmm_decode_frames(odf, score)) == [0, 25, 50]


def test_hmm_infeasible():
    with pytest.raises(InfeasiblePhraseError):
        hmm_decode_frames(np.ones(2), PhraseScore(0.0, 0.02, (1.0, 1.0, 1.0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 40), st.integers(0, 2**31 - 1))
def test_hmm_output_invariants(k, extra, seed):
    n = k + extra
    rng = np.random.default_rng(seed)
    score = PhraseScore(0.5, 0.5 + n / 100, tuple(rng.uniform(0.1, 1.0, k)))
    times = hmm_decode(rng.random(n), score)
    assert len(times) == k
    assert times[0] == 0.5
    assert np.all(np.diff(times) > 0)


def test_decode_phrases_covers_each_phrase():
    odf = np.full(300, 0.01)
    odf[[20, 60, 150, 200, 260]] = 0.95
    phrases = [PhraseScore(0.2, 1.0, (0.4, 0.4)), PhraseScore(1.5, 3.0, (0.5, 0.6, 0.4))]
    np.testing.assert_allclose(decode_phrases(odf, phrases), [0.2, 0.6, 1.5, 2.0, 2.6])


def test_onsets_in_phrases():
    phrases = [PhraseScore(0.2, 1.0, (1.0,)), PhraseScore(1.5, 3.0, (1.0,))]
    times = [0.1, 0.2, 0.99, 1.0, 1.2, 1.5, 2.99, 2.999]
    # 2.999 rounds to frame 300, outside the decoded frames 150..299
    np.testing.assert_allclose(onsets_in_phrases(times, phrases), [0.2, 0.99, 1.5, 2.99])


def test_phrase_start_onset_survives_frame_rounding():
    # 0.3653 s rounds up to frame 37; the onset at the phrase start must stay
    phrases = [PhraseScore(0.3653, 1.2, (0.4, 0.4)), PhraseScore(1.2, 2.0, (1.0,))]
    np.testing.assert_allclose(onsets_in_phrases([0.3653, 0.7, 1.2], phrases), [0.3653, 0.7, 1.2])
    kept = onsets_in_phrases([0.3653, 0.7], phrases[:1])
    assert list(kept) == [0.3653, 0.7]
    odf = np.full(200, 0.01)
    odf[[37, 70]] = 0.95
    det = decode_phrases(odf, phrases[:1])
    assert match_onsets(det, kept) == (2, 0, 0)
