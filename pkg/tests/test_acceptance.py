"""Exit criteria for the simulator, one test per criterion.

Run ``pytest tests/test_acceptance.py`` and look for the "acceptance
criteria" section of the terminal summary.
"""

import itertools
import math
import random
import time
from dataclasses import replace
from functools import lru_cache

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awqmp import protocols as proto
from awqmp.cli import main
from awqmp.energy import RadioModel, ReliabilityParams, reliability, sample_failure
from awqmp.engine import simulate
from awqmp.linsolve import LinearSystem, SingularMatrixError, gaussian_solve, residual_norm
from awqmp.model import NodeState, Position, ScenarioConfig
from awqmp.nodesim import (COND_SENSOR, PH_SENSOR, TEMP_SENSOR, AcqState, Action, Event,
                           FrameError, IllegalTransition, MeasurementFrame, Phase,
                           decode_frame, encode_frame, sample_sensor, step_acquisition)

from .test_linsolve import cramer_solve

SEEDS = range(1, 11)


@lru_cache(maxsize=None)
def default_runs():
    """Both protocols on the default scenario for ten seeds, plus wall time."""
    start = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        for protocol in ("echerp", "leach"):
            runs[protocol, seed] = simulate(ScenarioConfig(rng_seed=seed, protocol=protocol))
    return runs, time.perf_counter() - start


# 1 -----------------------------------------------------------------------

@pytest.mark.criterion(1, "reliability model and failure sampling")
def test_reliability_model():
    start = time.perf_counter()
    for lam, t in itertools.product([0.0, 1e-4, 1e-3, 1e-2], [0, 1, 1e2, 1e3, 1e4]):
        exact = float(mpmath.exp(-mpmath.mpf(lam) * t))
        assert abs(reliability(ReliabilityParams(lam), t) - exact) <= 1e-12

    rng = np.random.default_rng(2024)
    n = 100_000
    for lam in [0.0, 1e-4, 1e-3, 1e-2]:
        params = ReliabilityParams(lam)
        hits = sum(sample_failure(params, 1, rng) for _ in range(n))
        p = 1.0 - math.exp(-lam)
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(hits - n * p) <= 3 * sigma, (lam, hits, n * p)
    assert time.perf_counter() - start < 5.0


# 2 -----------------------------------------------------------------------

@pytest.mark.criterion(2, "Gaussian elimination accuracy, oracle agreement, singularity")
def test_solver():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        a = rng.uniform(-1, 1, (n, n)) + n * np.eye(n)
        b = rng.uniform(-1, 1, n)
        system = LinearSystem(a, b)
        x = gaussian_solve(system)
        assert residual_norm(system, x) <= 1e-9 * max(1.0, np.max(np.abs(b)))

    for n in (1, 2, 3, 4):
        for _ in range(100):
            a = rng.uniform(-1, 1, (n, n)) + n * np.eye(n)
            b = rng.uniform(-1, 1, n)
            x = gaussian_solve(LinearSystem(a, b))
            oracle = cramer_solve(a.tolist(), b.tolist())
            assert np.all(np.abs(x - oracle) <= 1e-9 * np.maximum(np.abs(oracle), 1e-3))

    singular = [
        np.array([[1.0, 2.0], [2.0, 4.0]]),
        np.zeros((3, 3)),
        np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1.0]]),
        np.array([[1.0, 2, 0], [3, 6, 0], [5, 1, 0]]),  # zero column
    ]
    for n in range(3, 9):
        a = rng.uniform(-1, 1, (n, n))
        a[n - 1] = 0.3 * a[0] - 1.7 * a[1] + a[n - 2] * (n > 3)  # dependent row
        singular.append(a)
        singular.append(a * 1e-4)  # joule-scale units
    for a in singular:
        with pytest.raises(SingularMatrixError):
            gaussian_solve(LinearSystem(a, np.ones(len(a))))
    assert time.perf_counter() - start < 10.0


# 3 -----------------------------------------------------------------------

def replay_schedule(e_head, e_mem, residual, quotas):
    """Walk the rotation head by head, charging fractional rounds."""
    left = list(residual)
    for head, rounds in enumerate(quotas):
        for i in range(len(left)):
            left[i] -= rounds * (e_head[i] if i == head else e_mem[i])
    return left


@pytest.mark.criterion(3, "equalized depletion under the solved rotation")
def test_equalization():
    rng = np.random.default_rng(3)
    radio = RadioModel()
    bs = Position(50.0, -10.0)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        ids = tuple(range(n))
        ox, oy = rng.uniform(0, 50, 2)
        pts = {i: Position(ox + rng.uniform(0, 50), oy + rng.uniform(0, 50)) for i in ids}
        states = {i: NodeState(residual_energy=float(rng.uniform(0.7, 1.0))) for i in ids}
        cluster = proto.Cluster(0, ids)
        hop = proto.estimate_next_hop_distance(ids, pts, bs, radio.d0)
        schedule = proto.solve_rotation(cluster, states, radio, 4000, hop, pts)
        e_head, e_mem = proto.role_costs(cluster, radio, 4000, hop, pts)
        quotas = [schedule.quotas[i] for i in ids]
        assert min(quotas) > 0.0
        left = replay_schedule(e_head, e_mem, [states[i].residual_energy for i in ids], quotas)
        for i in ids:
            assert abs(left[i]) <= 1e-6 * states[i].residual_energy


# 4 -----------------------------------------------------------------------

@pytest.mark.criterion(4, "round-by-round energy conservation, both protocols, 3 seeds")
def test_energy_conservation():
    runs, _ = default_runs()
    for protocol, seed in itertools.product(("echerp", "leach"), (1, 2, 3)):
        m = runs[protocol, seed]
        assert m.records
        for r in m.records:
            expected = m.initial_total + r.total_harvested - r.total_dissipated - r.total_sensing
            assert abs(r.total_residual - expected) <= 1e-9 * m.initial_total


# 5 -----------------------------------------------------------------------

@pytest.mark.criterion(5, "ECHERP keeps nodes alive longer than LEACH")
def test_directional_lifetime():
    runs, elapsed = default_runs()
    wins = 0
    echerp_diss, leach_diss = [], []
    for seed in SEEDS:
        e, l = runs["echerp", seed], runs["leach", seed]
        horizon = ScenarioConfig().rounds_max
        e_first = e.first_death_round if e.first_death_round is not None else horizon
        l_first = l.first_death_round if l.first_death_round is not None else horizon
        wins += e_first >= l_first
        echerp_diss.append(e.dissipated_at(l_first))
        leach_diss.append(l.dissipated_at(l_first))
    print(f"ECHERP first death >= LEACH in {wins}/10 seeds; mean dissipated at LEACH first "
          f"death: ECHERP {np.mean(echerp_diss):.3f} J, LEACH {np.mean(leach_diss):.3f} J; "
          f"{elapsed:.1f}s for 20 runs")
    assert wins >= 8
    assert np.mean(echerp_diss) <= np.mean(leach_diss)
    assert elapsed < 60.0


# 6 -----------------------------------------------------------------------

EXPECTED_TABLE = {
    (Phase.BOOT, Event.POWER_ON): (Phase.SERIAL_INIT, Action.NONE),
    (Phase.SERIAL_INIT, Event.DATA_READY): (Phase.WAIT, Action.NONE),
    (Phase.WAIT, Event.TIMER_EXPIRED): (Phase.ACQ_TEMP, Action.REQUEST_TEMP),
    (Phase.ACQ_TEMP, Event.DATA_READY): (Phase.ACQ_PH, Action.REQUEST_PH),
    (Phase.ACQ_PH, Event.DATA_READY): (Phase.ACQ_COND, Action.REQUEST_COND),
    (Phase.ACQ_COND, Event.DATA_READY): (Phase.SEND, Action.EMIT_FRAME),
    (Phase.SEND, Event.DATA_READY): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_TEMP, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_PH, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
    (Phase.ACQ_COND, Event.TIMEOUT): (Phase.WAIT, Action.NONE),
}


@settings(max_examples=300, deadline=None)
@given(restarts=st.integers(0, 50), successes=st.integers(0, 2))
def _timeout_cycle_property(restarts, successes):
    state = AcqState(Phase.WAIT, 0.0, restarts)
    actions = []
    for event in [Event.TIMER_EXPIRED] + [Event.DATA_READY] * successes + [Event.TIMEOUT]:
        state, action = step_acquisition(state, event)
        actions.append(action)
    assert Action.EMIT_FRAME not in actions
    assert state.cycle_restarts == restarts + 1
    assert state.phase is Phase.WAIT


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(list(Event)), max_size=60))
def _random_sequence_property(events):
    state = AcqState(Phase.WAIT, 0.0, 0)
    timed_out = False
    for event in events:
        try:
            nxt, action = step_acquisition(state, event)
        except IllegalTransition:
            continue
        if state.phase is Phase.WAIT:
            timed_out = False
        if event is Event.TIMEOUT:
            timed_out = True
            assert nxt.cycle_restarts == state.cycle_restarts + 1
        else:
            assert nxt.cycle_restarts == state.cycle_restarts
        if action is Action.EMIT_FRAME:
            assert not timed_out
        state = nxt


@pytest.mark.criterion(6, "acquisition state machine laws")
def test_state_machine():
    for phase, event in itertools.product(Phase, Event):
        state = AcqState(phase, 1.5, 3)
        if (phase, event) in EXPECTED_TABLE:
            nxt, action = step_acquisition(state, event)
            assert (nxt.phase, action) == EXPECTED_TABLE[phase, event]
            assert nxt.cycle_restarts == 3 + (event is Event.TIMEOUT)
        else:
            with pytest.raises(IllegalTransition):
                step_acquisition(state, event)
    _timeout_cycle_property()
    _random_sequence_property()


# 7 -----------------------------------------------------------------------

def _on_grid(values, resolution):
    steps = np.asarray(values) / resolution
    return np.all(np.abs(steps - np.round(steps)) < 1e-6)


@pytest.mark.criterion(7, "sensor ranges, resolutions and noise-free determinism")
def test_sensor_models():
    rng = np.random.default_rng(77)
    n = 10_000
    cases = [
        (PH_SENSOR, rng.uniform(-2, 16, n), 0.0, 14.0, 0.01),
        (TEMP_SENSOR, rng.uniform(-25, 80, n), -15.0, 70.0, 0.1),
        (COND_SENSOR, rng.uniform(0, 220, n), 0.0, 200.0, 0.0001),
    ]
    for model, truths, lo, hi, res in cases:
        scalar = [sample_sensor(model, float(t), rng) for t in truths]
        vector = sample_sensor(model, truths, rng)
        for readings in (np.array(scalar), vector):
            assert np.all((readings >= lo) & (readings <= hi))
            assert _on_grid(readings, res)

    # default water stays inside the tabulated 15..70 C probe range too
    temps = sample_sensor(TEMP_SENSOR, np.full(n, 25.0), rng)
    assert np.all((temps >= 15.0) & (temps <= 70.0))

    for model in (PH_SENSOR, TEMP_SENSOR, COND_SENSOR):
        quiet = replace(model, noise_sigma=0.0)
        first = [sample_sensor(quiet, v, np.random.default_rng(1)) for v in (0.5, 7.3456, 33.33)]
        again = [sample_sensor(quiet, v, np.random.default_rng(2)) for v in (0.5, 7.3456, 33.33)]
        assert first == again
        truths = np.linspace(model.min, model.max, 500)
        a = sample_sensor(quiet, truths, np.random.default_rng(3))
        b = sample_sensor(quiet, truths, np.random.default_rng(4))
        assert np.array_equal(a, b)


# 8 -----------------------------------------------------------------------

def _random_frame(r):
    return MeasurementFrame(
        node_id=r.randrange(10 ** 6),
        sequence=r.randrange(10 ** 9),
        timestamp=r.randrange(10 ** 9),
        temperature=round(r.randint(-150, 700) * 0.1, 1),
        ph=round(r.randint(0, 1400) * 0.01, 2),
        conductivity=round(r.randint(0, 2_000_000) * 0.0001, 4),
        residual_energy=round(r.randrange(10 ** 8) * 1e-6, 6),
    )


def _mutate(line: str, r) -> str:
    fields = line.rstrip("\n").split(",")
    kind = r.randrange(8)
    if kind == 0:
        fields[0] = r.choice(["XYZ", "AWQM", "awqmp", "AWQMP!"])
    elif kind == 1:
        del fields[r.randrange(1, len(fields))]
    elif kind == 2:
        fields.insert(r.randrange(1, len(fields) + 1), "0")
    elif kind == 3:
        k = r.randrange(1, len(fields))
        pos = r.randrange(len(fields[k]) + 1)
        fields[k] = fields[k][:pos] + r.choice("xz#e ") + fields[k][pos:]
    elif kind == 4:
        fields[5] = f"{r.uniform(14.01, 99):.2f}"  # pH
    elif kind == 5:
        fields[4] = r.choice([f"{r.uniform(70.1, 200):.1f}", f"{r.uniform(-90, -15.1):.1f}"])
    elif kind == 6:
        fields[6] = f"{r.uniform(200.0001, 900):.4f}"
    else:
        k = r.randrange(4, 8)
        fields[k] = fields[k] + "0"  # wrong number of decimals
    return ",".join(fields) + "\n"


@pytest.mark.criterion(8, "byte-identical runs and frame codec round-trip/rejection")
def test_determinism_and_format(tmp_path, datadir):
    scenario = datadir.parent.parent / "scenarios" / "default.toml"
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--scenario", str(scenario), "--seed", "4", "--out", str(a)]) == 0
    assert main(["run", "--scenario", str(scenario), "--seed", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()

    r = random.Random(8)
    frames = [_random_frame(r) for _ in range(10_000)]
    for f in frames:
        assert decode_frame(encode_frame(f)) == f
    rejected = 0
    for f in frames[:1000]:
        bad = _mutate(encode_frame(f).decode(), r).encode()
        with pytest.raises(FrameError):
            decode_frame(bad)
        rejected += 1
    assert rejected == 1000


# 9 -----------------------------------------------------------------------

@pytest.mark.criterion(9, "default scenario (ECHERP, 100 nodes, 2000 rounds) under 10 s")
def test_performance():
    start = time.perf_counter()
    m = simulate(ScenarioConfig(protocol="echerp"))
    elapsed = time.perf_counter() - start
    print(f"default ECHERP run: {elapsed:.2f}s, {len(m.records)} rounds")
    assert elapsed < 10.0
