import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popjump.model import InfluencerParams, SystemParams
from popjump.simulator import (
    EventKind,
    EventLog,
    JointTrajectory,
    classify_event,
    first_place_average_stay,
    first_place_probability,
    inter_jump_survival,
    leadership,
    occupation_pdf,
    read_events_csv,
    sample_inter_jump,
    simulate_population,
    simulate_trajectory,
    step,
    time_average,
    write_events_csv,
)

SYS = SystemParams(gamma=1 / 64, theta=0.6, epsilon=0.01)


def _log(times, x_before, jumps, horizon, x0=0.0, gamma=0.1, iid=0):
    n = len(times)
    return EventLog(iid, np.asarray(times, float), np.zeros(n, np.int8),
                    np.asarray(x_before, float), np.asarray(jumps, float), horizon, None, x0, gamma)


# --- inter-jump times ---------------------------------------------------------------

def test_constant_rate_inter_jump_mean():
    z = sample_inter_jump(5.0, SYS, InfluencerParams(lambda0=4.0), np.random.default_rng(0), 10**5)
    assert z.mean() == pytest.approx(0.25, rel=0.01)


def test_zero_state_is_exponential():
    inf = InfluencerParams(lambda0=2.0, lambda1=3.0, phi=0.5)
    s = SystemParams(mu=0.5)
    z = sample_inter_jump(0.0, s, inf, np.random.default_rng(1), 10**5)
    assert z.mean() == pytest.approx(1 / 2.5, rel=0.015)


def _survival_closed_form(s, z, gamma, l0, l1, phi, mu):
    return np.exp(-(l0 + mu) * s - l1 * z**phi * (1 - np.exp(-gamma * phi * s)) / (gamma * phi))


@pytest.mark.parametrize("z,l1,phi,mu", [(50.0, 2.0, 0.2, 0.0), (5.0, 0.5, 0.8, 1.0)])
def test_survival_function(z, l1, phi, mu):
    s = SystemParams(gamma=1 / 64, mu=mu)
    inf = InfluencerParams(lambda0=1.0, lambda1=l1, phi=phi)
    grid = np.linspace(0, 2, 9)
    assert np.allclose(inter_jump_survival(grid, z, s, inf),
                       _survival_closed_form(grid, z, 1 / 64, 1.0, l1, phi, mu), rtol=1e-12)


def test_sampled_survival_matches():
    s = SystemParams(gamma=1 / 64)
    inf = InfluencerParams(lambda0=1.0, lambda1=2.0, phi=0.2)
    z = sample_inter_jump(100.0, s, inf, np.random.default_rng(2), 10**5)
    t = np.linspace(0.0, 1.0, 41)
    emp = (z[:, None] > t).mean(axis=0)
    assert np.max(np.abs(emp - _survival_closed_form(t, 100.0, 1 / 64, 1.0, 2.0, 0.2, 0.0))) <= 0.01


def test_negative_state_rejected():
    with pytest.raises(ValueError):
        sample_inter_jump(-1.0, SYS, InfluencerParams(), np.random.default_rng(0))


# --- event classification -----------------------------------------------------------

def test_classification_without_exogenous_events():
    rng = np.random.default_rng(0)
    assert all(classify_event(3.0, SYS, InfluencerParams(), rng) is EventKind.INTERNAL for _ in range(100))


def test_classification_ratio():
    s = SystemParams(mu=1.0)
    inf = InfluencerParams(lambda0=4.0)
    rng = np.random.default_rng(3)
    ext = sum(classify_event(2.0, s, inf, rng) is EventKind.EXTERNAL for _ in range(10**5))
    assert ext / 1e5 == pytest.approx(0.2, abs=0.005)


def test_classification_only_exogenous():
    s = SystemParams(mu=1.0)
    inf = InfluencerParams(lambda0=0.0, lambda1=0.0)
    rng = np.random.default_rng(0)
    assert all(classify_event(1.0, s, inf, rng) is EventKind.EXTERNAL for _ in range(100))


# --- single step ------------------------------------------------------------------------

def test_forced_step():
    ev = step(10.0, SYS, InfluencerParams(), np.random.default_rng(0), zeta=64 * math.log(2), jump=2.0)
    assert ev.state_before_jump == pytest.approx(5.0, rel=1e-14)
    assert ev.state_after_jump == pytest.approx(7.0, rel=1e-14)
    assert ev.kind is EventKind.INTERNAL


def test_step_modes_agree_for_constant_intensity():
    s = SystemParams(mu=1.0)
    a = step(3.0, s, InfluencerParams(), np.random.default_rng(5), mode="exact")
    b = step(3.0, s, InfluencerParams(), np.random.default_rng(5), mode="previous")
    assert a == b
    with pytest.raises(ValueError):
        step(3.0, s, InfluencerParams(), np.random.default_rng(5), mode="bogus")


# --- trajectories ------------------------------------------------------------------------

def test_poisson_count():
    log = simulate_trajectory(SYS, InfluencerParams(lambda0=4.0), 100.0, seed=11)
    assert abs(len(log) - 400) <= 3 * math.sqrt(400)
    assert np.all(log.kinds == 0)


def test_determinism_byte_identical():
    inf = InfluencerParams(lambda0=1.0, lambda1=0.5, phi=0.3)
    s = SystemParams(gamma=1 / 16, theta=0.2, mu=0.2)
    a = simulate_trajectory(s, inf, 500.0, seed=42)
    b = simulate_trajectory(s, inf, 500.0, seed=42)
    assert a.to_csv() == b.to_csv()
    assert a.equals(b)
    c = simulate_trajectory(s, inf, 500.0, seed=43)
    assert not a.equals(c)


def test_chunked_buffers_do_not_change_the_path():
    # a long horizon crosses several buffer refills
    inf = InfluencerParams(lambda0=4.0)
    short = simulate_trajectory(SYS, inf, 1000.0, seed=9)
    long = simulate_trajectory(SYS, inf, 400000.0, seed=9)
    k = len(short)
    assert np.array_equal(long.times[:k], short.times)
    assert np.array_equal(long.jumps[:k], short.jumps)


def test_shot_noise_time_average():
    s = SystemParams(gamma=1 / 64, theta=0.0, epsilon=0.01)
    inf = InfluencerParams(beta=1.0, lambda0=4.0, cv=1.0)
    log = simulate_trajectory(s, inf, 2e5, seed=3)
    assert time_average(log, t0=2e4) == pytest.approx(258.56, rel=0.02)


def test_exogenous_events_recorded():
    s = SystemParams(mu=0.5)
    log = simulate_trajectory(s, InfluencerParams(lambda0=1.0), 4000.0, seed=1)
    frac = np.mean(log.kinds == 1)
    assert frac == pytest.approx(1 / 3, abs=0.03)
    assert log.posting_rate() == pytest.approx(1.0, rel=0.1)


def test_previous_mode_runs_and_differs():
    inf = InfluencerParams(lambda0=1.0, lambda1=1.0, phi=0.5)
    s = SystemParams(gamma=0.5, theta=0.2, mu=2.0)
    a = simulate_trajectory(s, inf, 2000.0, seed=4)
    b = simulate_trajectory(s, inf, 2000.0, seed=4, mode="previous")
    assert len(a) > 0 and len(b) > 0
    assert not a.equals(b)


def test_max_events_overflow():
    with pytest.raises(OverflowError):
        simulate_trajectory(SYS, InfluencerParams(lambda0=4.0), 1000.0, seed=0, max_events=100)


def test_invalid_trajectory_arguments():
    with pytest.raises(ValueError):
        simulate_trajectory(SYS, InfluencerParams(), 0.0, seed=0)
    with pytest.raises(ValueError):
        simulate_trajectory(SYS, InfluencerParams(), 10.0, seed=0, x0=-1.0)


def test_silent_influencer_only_decays():
    log = simulate_trajectory(SYS, InfluencerParams(lambda0=0.0), 200.0, seed=0, x0=8.0)
    assert len(log) == 0
    assert log.state_at(64 * math.log(2)) == pytest.approx(4.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), l1=st.floats(0.0, 2.0), phi=st.floats(0.0, 0.4),
       mu=st.floats(0.0, 1.0))
def test_trajectory_invariants(seed, l1, phi, mu):
    s = SystemParams(gamma=1 / 32, theta=0.3, mu=mu)
    inf = InfluencerParams(lambda0=1.0, lambda1=l1, phi=phi, cv=2.0)
    log = simulate_trajectory(s, inf, 200.0, seed=seed, x0=1.0)
    assert np.all(np.diff(log.times) > 0)
    assert np.all(log.times <= 200.0)
    assert np.all(log.jumps > 0)
    assert np.all(log.x_after > 0)
    # deterministic decay between consecutive events
    prev = np.concatenate([[1.0], log.x_after[:-1]])
    gaps = np.diff(np.concatenate([[0.0], log.times]))
    assert np.allclose(log.x_before, prev * np.exp(-s.gamma * gaps), rtol=1e-12)


def test_events_csv_round_trip(tmp_path):
    log = simulate_trajectory(SystemParams(mu=0.3), InfluencerParams(), 50.0, seed=2, influencer_id=3)
    path = tmp_path / "events.csv"
    write_events_csv([log], path)
    back = read_events_csv(path)[0]
    assert back.influencer_id == 3
    assert np.array_equal(back.times, log.times)
    assert np.array_equal(back.jumps, log.jumps)
    assert np.array_equal(back.kinds, log.kinds)
    assert [e.kind for e in back][:3] == [e.kind for e in log][:3]


# --- populations and seeds -------------------------------------------------------------

def test_streams_do_not_depend_on_population_size():
    infl = [InfluencerParams(beta=0.9**i) for i in range(3)]
    jt3 = simulate_population(system=SYS, influencers=infl, horizon=300.0, seed=8)
    jt1 = simulate_population(system=SYS, influencers=infl[:1], horizon=300.0, seed=8)
    assert jt3.logs[0].equals(jt1.logs[0])
    assert not jt3.logs[0].equals(jt3.logs[1])


def test_replicas_differ():
    infl = [InfluencerParams()]
    a = simulate_population(system=SYS, influencers=infl, horizon=100.0, seed=8, replica=0)
    b = simulate_population(system=SYS, influencers=infl, horizon=100.0, seed=8, replica=1)
    assert not a.logs[0].equals(b.logs[0])


def test_identical_influencers_are_exchangeable():
    infl = [InfluencerParams(beta=1.0)] * 5
    s = SystemParams(theta=0.3)
    jts = [simulate_population(system=s, influencers=infl, horizon=1e5, seed=21, replica=r)
           for r in range(2)]
    pi = first_place_probability(jts)
    assert pi.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.abs(pi - 0.2) <= 0.02)
    means = [time_average(log, t0=2e4) for log in jts[0].logs]
    assert np.std(means) / np.mean(means) < 0.05


# --- leadership ----------------------------------------------------------------------------

def test_leadership_hand_built():
    g = 0.1
    a = _log([3.0], [math.exp(-0.3)], [5.0], 10.0, x0=1.0, gamma=g)
    b = _log([], [], [], 10.0, x0=2.0, gamma=g, iid=1)
    jt = JointTrajectory([a, b], SystemParams(gamma=g), 10.0, 0.0)
    ld = leadership(jt)
    assert np.allclose(ld.lead_time, [7.0, 3.0])
    assert np.array_equal(ld.stays, [1, 1])
    assert np.allclose(ld.average_stay, [7.0, 3.0])


def test_leadership_window_clips():
    g = 0.1
    a = _log([3.0], [math.exp(-0.3)], [5.0], 10.0, x0=1.0, gamma=g)
    b = _log([], [], [], 10.0, x0=2.0, gamma=g, iid=1)
    ld = leadership(JointTrajectory([a, b], SystemParams(gamma=g), 10.0, 5.0))
    assert np.allclose(ld.probability, [1.0, 0.0])
    assert np.isnan(ld.average_stay[1])


def test_ties_go_to_lowest_index():
    a = _log([], [], [], 10.0, x0=1.0)
    b = _log([], [], [], 10.0, x0=1.0, iid=1)
    ld = leadership(JointTrajectory([a, b], SystemParams(gamma=0.1), 10.0, 0.0))
    assert np.allclose(ld.probability, [1.0, 0.0])


def test_single_influencer_leads_always():
    jt = simulate_population(system=SYS, influencers=[InfluencerParams()], horizon=500.0, seed=1)
    assert first_place_probability(jt)[0] == pytest.approx(1.0)
    assert first_place_average_stay(jt)[0] == pytest.approx(jt.window)


def test_stay_identity():
    infl = [InfluencerParams(beta=0.9**i) for i in range(4)]
    jt = simulate_population(system=SYS, influencers=infl, horizon=2e4, seed=5)
    ld = leadership(jt)
    assert ld.probability.sum() == pytest.approx(1.0, abs=1e-9)
    led = ld.stays > 0
    assert np.allclose(ld.average_stay[led] * ld.stays[led], ld.lead_time[led])


def test_leadership_by_brute_force():
    infl = [InfluencerParams(beta=0.9**i) for i in range(3)]
    jt = simulate_population(system=SYS, influencers=infl, horizon=3000.0, seed=6, burnin_frac=0.1)
    pi = first_place_probability(jt)
    t = np.linspace(jt.burn_in, jt.horizon, 20001)[:-1] + 1e-7
    states = np.array([[log.state_at(x) for x in t] for log in jt.logs])
    brute = np.bincount(np.argmax(states, axis=0), minlength=3) / t.size
    assert np.allclose(pi, brute, atol=0.005)


# --- occupation times --------------------------------------------------------------------

def test_occupation_single_segment():
    g = 1 / 64
    log = _log([], [], [], 64 * math.log(2), x0=10.0, gamma=g)
    h = occupation_pdf(log, [5.0, 10.0])
    assert h.occupation[0] == pytest.approx(64 * math.log(2), rel=1e-12)
    assert h.underflow == pytest.approx(0.0, abs=1e-9)


def test_occupation_mass_conservation_and_brute_force():
    log = simulate_trajectory(SYS, InfluencerParams(), 2000.0, seed=13, x0=1.0)
    edges = np.geomspace(1e3, 1e6, 30)
    h = occupation_pdf(log, edges, t0=100.0)
    assert abs(h.total - h.window) <= 1e-9 * h.window
    t = np.linspace(100.0, 2000.0, 400001)[:-1] + 1e-6
    x = np.array([log.state_at(v) for v in t[::20]])
    frac = np.histogram(x, bins=edges)[0] / x.size
    assert np.max(np.abs(frac - h.occupation / h.window)) < 0.01
    cdf = h.cdf_at_edges()
    assert cdf[-1] == pytest.approx(1.0 - h.overflow / h.window)
    assert np.all(np.diff(cdf) >= 0)


def test_occupation_histograms_add():
    log = simulate_trajectory(SYS, InfluencerParams(), 500.0, seed=1)
    edges = np.geomspace(1.0, 1e7, 20)
    a = occupation_pdf(log, edges, t0=0.0, t1=200.0)
    b = occupation_pdf(log, edges, t0=200.0, t1=500.0)
    c = occupation_pdf(log, edges)
    s = a + b
    assert np.allclose(s.occupation, c.occupation)
    assert s.window == pytest.approx(c.window)


def test_occupation_rejects_bad_edges():
    log = simulate_trajectory(SYS, InfluencerParams(), 10.0, seed=1)
    with pytest.raises(ValueError):
        occupation_pdf(log, [0.0, 1.0])
    with pytest.raises(ValueError):
        occupation_pdf(log, [2.0, 1.0])


def test_time_average_exact():
    g = 0.5
    log = _log([1.0], [2 * math.exp(-0.5)], [3.0], 3.0, x0=2.0, gamma=g)
    xa = 2 * math.exp(-0.5) + 3.0
    expected = (2 * (1 - math.exp(-0.5)) / g + xa * (1 - math.exp(-1.0)) / g) / 3.0
    assert time_average(log) == pytest.approx(expected, rel=1e-12)
