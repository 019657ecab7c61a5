import math
import random

import numpy as np
import pytest

from covomix.dsp import MelSpectrogram, mel_cepstra
from covomix.errors import DimensionError
from covomix.metrics import (MCD_CONST, SpeakerSegments, consistency_matrix, dtw_path_cost, extract_turn_events,
                             frame_distances, laughter_stats, mcd_aligned, mcd_dtw, merge_intervals, turn_stats)

from oracles import dtw_exhaustive, dtw_graph, grid_events, loop_stats, random_segments


def ev(segs):
    return extract_turn_events(SpeakerSegments(segs))


def test_hand_cases():
    e = ev({"A": [(0, 2)], "B": [(1.5, 3)]})
    assert [(s, t) for s, t, _ in e.overlaps] == [(1.5, 2)] and e.total("overlap") == 0.5
    e = ev({"A": [(0, 1), (2, 3)]})
    assert e.total("intra_pause") == 1.0 and not e.inter_silences
    e = ev({"A": [(0, 1)], "B": [(2, 3)]})
    assert e.total("inter_silence") == 1.0 and not e.intra_pauses
    assert e.total("active") == 2.0


def test_three_speakers_rejected_and_segments_validated():
    with pytest.raises(ValueError):
        ev({"A": [(0, 1)], "B": [(1, 2)], "C": [(2, 3)]})
    with pytest.raises(ValueError):
        SpeakerSegments({"A": [(0, 2), (1, 3)]})
    with pytest.raises(ValueError):
        SpeakerSegments({"A": [(1, 1)]})


def test_gap_after_overlap_uses_boundary_owner():
    # B overlaps the tail of A and then A resumes: B spoke last, A resumes -> inter
    e = ev({"A": [(0, 2), (3, 4)], "B": [(1, 2.5)]})
    assert e.total("inter_silence") == 0.5
    # B ends inside A, A pauses then resumes -> intra
    e = ev({"A": [(0, 2), (3, 4)], "B": [(0.5, 1.0)]})
    assert e.total("intra_pause") == 1.0


def test_zero_length_gap_is_not_an_event():
    e = ev({"A": [(0, 1)], "B": [(1, 2)]})
    assert not e.inter_silences and not e.intra_pauses


def test_grid_oracle_and_partition():
    rng = random.Random(0)
    for _ in range(100):
        segs = random_segments(rng)
        e = ev(segs)
        ref = grid_events(segs)
        for kind in ("overlap", "intra_pause", "inter_silence"):
            assert abs(e.total(kind) - ref[kind]) <= 0.01 + 1e-9
        union = merge_intervals(iv for ivs in segs.values() for iv in ivs)
        span = union[-1][1] - union[0][0]
        covered = sum(b - a for a, b in union)
        assert math.isclose(covered + e.total("intra_pause") + e.total("inter_silence"), span, abs_tol=1e-9)
        for s, t, _ in e.overlaps:
            assert t > s


def test_turn_stats_cases():
    one = ev({"A": [(0, 2)], "B": [(1.5, 3)]})
    st = turn_stats([one])
    assert st["overlap"].mean == st["overlap"].median == 0.5
    three = [ev({"A": [(0, 1), (1 + d, 5)]}) for d in (1.0, 2.0, 3.0)]
    st = turn_stats(three)
    assert st["intra_pause"].mean == 2.0 and st["intra_pause"].median == 2.0
    assert st["intra_pause"].hist.sum() == 3  # the last bin is closed
    assert st["inter_silence"].count == 0
    with pytest.raises(ValueError):
        turn_stats([])


def test_turn_stats_vs_loop():
    rng = random.Random(1)
    corpus = [ev(random_segments(rng)) for _ in range(30)]
    st = turn_stats(corpus, edges=np.linspace(0, 2, 9))
    for kind in ("overlap", "intra_pause", "inter_silence", "active"):
        d = [x for e in corpus for x in e.durations(kind)]
        mean, med = loop_stats(d)
        assert st[kind].count == len(d)
        assert math.isclose(st[kind].mean, mean, rel_tol=1e-12) and st[kind].median == med
        counts = [0] * 8
        for x in d:
            for b in range(8):
                lo, hi = b * 0.25, (b + 1) * 0.25
                if lo <= x < hi or (b == 7 and x == hi):
                    counts[b] += 1
                    break
        assert list(st[kind].hist) == counts


def test_laughter():
    s = laughter_stats([[]])
    assert (s.count, s.mean_duration, s.defined) == (0, 0.0, False)
    s = laughter_stats([[(0, 1)], [(2, 4)]])
    assert (s.count, s.mean_duration) == (2, 1.5)
    rng = random.Random(2)
    ann = [[(a, a + rng.uniform(0, 2)) for a in (rng.uniform(0, 9) for _ in range(rng.randint(0, 5)))]
           for _ in range(20)]
    flat = [e - s for d in ann for s, e in d]
    got = laughter_stats(ann)
    assert got.count == len(flat) and math.isclose(got.mean_duration, sum(flat) / len(flat), rel_tol=1e-12)
    with pytest.raises(ValueError):
        laughter_stats([[(2, 1)]])


def test_consistency_examples():
    v = np.array([1.0, 2.0, -3.0])
    assert np.array_equal(consistency_matrix([v, v, v]), np.ones((3, 3)))
    assert consistency_matrix([[1, 0], [0, 1]])[0, 1] == 0.0
    assert consistency_matrix([v, -v])[0, 1] == -1.0
    with pytest.raises(ValueError):
        consistency_matrix([v, np.zeros(3)])
    with pytest.raises(DimensionError):
        consistency_matrix([v])


def rand_mel(rng, n):
    return MelSpectrogram(rng.standard_normal((n, 80)))


def test_mcd_identity_duplicate_symmetry():
    rng = np.random.default_rng(0)
    a = rand_mel(rng, 12)
    assert mcd_dtw(a, a) == 0.0
    dup = MelSpectrogram(np.insert(a.values, 5, a.values[5], axis=0))
    assert mcd_dtw(a, dup) == 0.0
    b = rand_mel(rng, 9)
    assert abs(mcd_dtw(a, b) - mcd_dtw(b, a)) <= 1e-12
    c = rand_mel(rng, 12)
    assert mcd_dtw(a, c) <= mcd_aligned(a, c) + 1e-12


def test_mcd_errors():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        mcd_dtw(MelSpectrogram(np.zeros((0, 80))), rand_mel(rng, 3))
    with pytest.raises(DimensionError):
        mcd_dtw(MelSpectrogram(np.zeros((3, 40))), rand_mel(rng, 3))


def test_frame_distance_constant():
    ca, cb = np.zeros((1, 13)), np.zeros((1, 13))
    cb[0, 0] = 1.0
    assert frame_distances(ca, cb)[0, 0] == MCD_CONST == 10 * math.sqrt(2) / math.log(10)


def test_dtw_vs_enumeration_small():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n, m = rng.integers(1, 7, size=2)
        cost = rng.random((n, m)) + 1e-3
        got, ref = dtw_path_cost(cost), dtw_exhaustive(cost)
        assert abs(got[0] - ref[0]) <= 1e-9 and got[1] == ref[1]


def test_mcd_matches_graph_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rand_mel(rng, int(rng.integers(1, 21))), rand_mel(rng, int(rng.integers(1, 21)))
        cost = frame_distances(mel_cepstra(a), mel_cepstra(b))
        total, length = dtw_graph(cost)
        assert abs(mcd_dtw(a, b) - total / length) <= 1e-9
