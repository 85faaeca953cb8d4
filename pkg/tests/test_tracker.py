import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egotrack import io, masks, synth, tracker
from egotrack.costs import AttributeVector, CostConfig, cost_matrix
from egotrack.tracker import PROPAGATED, FeatureWindow, Observation, Track, TrackerError, TrackerState

BOX = masks.from_box(8, 8, 1, 1, 3, 3)


def ob(frame, sid, loc=(0.0, 0.0, 2.0), feat=(1.0, 0.0), cat="mug", inst="a"):
    return Observation(frame, BOX, AttributeVector(np.array(loc, float), np.array(feat, float), cat, inst), sid)


def test_cold_start():
    st_ = TrackerState()
    assert tracker.step(st_, [ob(0, "x"), ob(0, "y", loc=(5, 0, 2), inst="b")]) == [0, 1]
    assert len(st_.tracks) == 2 and st_.next_id == 2


def test_identical_observation_inherits_id():
    st_ = TrackerState()
    tracker.step(st_, [ob(0, "x")])
    assert tracker.step(st_, [ob(1, "y")]) == [0]


def test_category_change_spawns_new_track():
    st_ = TrackerState()
    tracker.step(st_, [ob(0, "x")])
    assert tracker.step(st_, [ob(1, "y", cat="pan")]) == [1]
    old = st_.tracks[0]
    assert old.history[-1] == (1, PROPAGATED)
    assert old.last_category == "mug"


def test_step_errors():
    st_ = TrackerState()
    tracker.step(st_, [ob(3, "x")])
    with pytest.raises(TrackerError):
        tracker.step(st_, [ob(3, "y")])
    with pytest.raises(TrackerError):
        tracker.step(st_, [ob(4, "y"), ob(4, "y", inst="b")])
    with pytest.raises(TrackerError):
        tracker.step(st_, [ob(5, "y"), ob(6, "z")])


def test_empty_mask_rejected():
    empty = masks.encode(np.zeros((4, 4), bool))
    with pytest.raises(TrackerError):
        Observation(0, empty, AttributeVector(np.zeros(3), np.ones(2), "a", "a"), "s")


def test_track_attributes():
    t = Track.start(0, ob(0, "a", feat=(1.0, 0.0)))
    assert np.array_equal(tracker.track_attributes(t).feature, [1.0, 0.0])
    t.assign(ob(1, "b", feat=(0.0, 1.0), loc=(1, 1, 1), inst="q"))
    a = tracker.track_attributes(t)
    assert np.allclose(a.feature, [0.5, 0.5])
    assert np.array_equal(a.location, [1, 1, 1]) and a.instance == "q"


def test_track_attributes_needs_history():
    t = Track(0, np.zeros(3), "a", "a", FeatureWindow())
    with pytest.raises(TrackerError):
        tracker.track_attributes(t)


def test_feature_window_keeps_latest_100():
    w = FeatureWindow()
    feats = [np.array([float(k), 1.0]) for k in range(150)]
    for f in feats:
        w.push(f)
    assert len(w) == 100
    assert np.allclose(w.mean(), np.mean(feats[50:], axis=0), atol=1e-9)
    assert not np.allclose(w.mean(), np.mean(feats, axis=0))


def test_feature_window_long_run_accuracy():
    rng = np.random.default_rng(0)
    w = FeatureWindow(maxlen=7)
    for _ in range(25_000):
        w.push(rng.normal(size=4) * 1e3)
    assert np.allclose(w.mean(), np.mean(list(w.items), axis=0), atol=1e-9)


def test_feature_dimension_change_rejected():
    w = FeatureWindow()
    w.push(np.ones(3))
    with pytest.raises(TrackerError):
        w.push(np.ones(4))


def test_run_empty_and_single_object():
    assert tracker.run([]) == []
    tracks = tracker.run([[ob(t, f"s{t}")] for t in range(10)])
    assert len(tracks) == 1 and len(tracks[0].observations()) == 10


def scenario_tracks(spec, cfg=None):
    scn = synth.generate(spec)
    recs, cams = io.scenario_frames(scn)
    cfg = cfg or CostConfig()
    return tracker.run(io.build_observations(recs, cams, cfg), cfg, all_frames=range(spec.n_frames)), scn


def test_reappearing_object_keeps_one_track():
    tracks, scn = scenario_tracks(synth.out_of_view_spec())
    frames = sorted(o["frame"] for o in scn.observations)
    assert frames == list(range(10)) + list(range(20, 30))
    assert len({o["initial_instance"] for o in scn.observations}) == 2
    assert len(tracks) == 1
    assert [f for f, o in tracks[0].history if o is PROPAGATED] == list(range(10, 20))


def test_single_object_reappearance_cost_stays_under_gate():
    # Without the location term the returning object costs at most
    # alpha_s + ln(1 + 4 alpha_v) < gamma, so it is still re-identified.
    cfg = CostConfig().without("location")
    assert cfg.alpha_s + math.log1p(4 * cfg.alpha_v) < cfg.gamma
    tracks, _ = scenario_tracks(synth.out_of_view_spec(), cfg)
    assert len(tracks) == 1


@pytest.mark.xfail(strict=True, reason="unreachable at the default gate: a lone object's reappearance cost is below gamma with or without location")
def test_location_disabled_single_object_fragments():
    tracks, _ = scenario_tracks(synth.out_of_view_spec(), CostConfig().without("location"))
    assert len(tracks) >= 2


def random_frames(seed, n_frames=12):
    rng = np.random.default_rng(seed)
    frames = []
    for t in range(n_frames):
        k = int(rng.integers(0, 4))
        frames.append(
            [
                ob(
                    t,
                    f"{t}:{i}",
                    loc=rng.normal(size=3) * 3,
                    feat=rng.normal(size=4),
                    cat=str(rng.choice(["a", "b"])),
                    inst=str(rng.integers(0, 3)),
                )
                for i in range(k)
            ]
        )
    return frames


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([None, 2]))
def test_invariants(seed, max_age):
    frames = random_frames(seed)
    cfg = CostConfig(max_track_age=max_age)
    st_ = TrackerState(config=cfg)
    seen = 0
    for t, obs in enumerate(frames):
        before = {tr.refined_id: tracker.track_attributes(tr) for tr in st_.tracks}
        n_before = len(st_.tracks)
        if obs:
            ids = tracker.step(st_, obs)
            assert len(set(ids)) == len(ids)
        else:
            tracker.advance(st_, t)
        seen += len(obs)
        assert len(st_.tracks) >= n_before
        assert [tr.refined_id for tr in st_.tracks] == list(range(len(st_.tracks)))
        for tr in st_.tracks:
            f, o = tr.history[-1]
            assert f == t
            if o is PROPAGATED:
                a, b = before[tr.refined_id], tracker.track_attributes(tr)
                assert np.array_equal(a.location, b.location) and np.array_equal(a.feature, b.feature)
                assert (a.category, a.instance) == (b.category, b.instance)
            elif tr.refined_id in before:
                # accepted matches respect the gate
                c = cost_matrix([before[tr.refined_id]], [o.attributes], cfg)[0, 0]
                assert c <= cfg.gamma
    assert sum(len(tr.observations()) for tr in st_.tracks) == seen


def test_deterministic():
    a = tracker.run(random_frames(5))
    b = tracker.run(random_frames(5))
    assert io.track_records(a) == io.track_records(b)


def test_new_tracks_not_matched_in_creation_frame():
    st_ = TrackerState()
    ids = tracker.step(st_, [ob(0, "x"), ob(0, "y")])
    assert ids == [0, 1]


def test_max_track_age_limits_candidates():
    cfg = CostConfig(max_track_age=3)
    st_ = TrackerState(config=cfg)
    tracker.step(st_, [ob(0, "x")])
    for t in range(1, 6):
        tracker.advance(st_, t)
    assert tracker.step(st_, [ob(6, "y")]) == [1]


def test_run_checks_input():
    with pytest.raises(TrackerError):
        tracker.run([ob(2, "a"), ob(1, "b")])
    with pytest.raises(TrackerError):
        tracker.run([ob(0, "a"), ob(1, "b", feat=(1.0, 0.0, 0.0))])
    with pytest.raises(TrackerError):
        tracker.run([ob(5, "a")], all_frames=range(3))


def static_track(locs):
    t = Track.start(0, ob(0, "s0", loc=locs[0]))
    for f, loc in enumerate(locs[1:], start=1):
        if loc is None:
            t.propagate(f)
        else:
            t.assign(ob(f, f"s{f}", loc=loc))
    return t


def test_static_window_examples():
    still = static_track([(0, 0, 1)] * 10)
    assert tracker.detect_static_windows(still, 0.05, 2) == [(0, 9)]
    moving = static_track([(k, 0, 1) for k in range(10)])
    assert tracker.detect_static_windows(moving, 0.05, 2) == []
    jump = static_track([(0, 0, 1)] * 5 + [(1, 0, 1)] * 5)
    assert tracker.detect_static_windows(jump, 0.05, 3) == [(0, 4), (5, 9)]


def test_static_windows_break_on_propagation_and_min_len():
    t = static_track([(0, 0, 1)] * 4 + [None] + [(0, 0, 1)] * 2)
    assert tracker.detect_static_windows(t, 0.05, 2) == [(0, 3), (5, 6)]
    assert tracker.detect_static_windows(t, 0.05, 3) == [(0, 3)]
    with pytest.raises(TrackerError):
        tracker.detect_static_windows(t, 0.0, 3)
    with pytest.raises(TrackerError):
        tracker.detect_static_windows(t, 0.05, 1)
