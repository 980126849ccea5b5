"""Closed-form rates, schedule costs, and the interception-accuracy sweep."""
import json

import numpy as np
import pytest

from laqkd.errors import ConfigError, ScheduleCycleError
from laqkd.metrics import (
    LEAKAGE,
    PROTOCOL_IDS,
    REFERENCE_PROTOCOLS,
    Event,
    TransmissionSchedule,
    breidbart_bound_oracle,
    build_report,
    discard_counts,
    format_comparison,
    guess_probability_curve,
    leakage_summary,
    protocol_schedule,
    psk_bits,
    qubit_efficiency,
    recycling_rate_p1,
    recycling_rate_p2,
    recycling_rate_p3,
    schedule_from_json,
    schedule_to_json,
    ttc,
    value_guess_accuracy,
    waves,
)


# ---------------------------------------------------------------------------
# Recycling rates

def test_rate_p1_headline_case_is_exact():
    # (100*128 + 67*64) / (100*192) lands on the float 0.89 exactly
    res = recycling_rate_p1(128, 64)
    assert res.rate == 0.89
    assert res.leaked_bits == 21.12
    assert res.discard_bits == 22
    assert not res.clamped


def test_rate_p1_exact_mode():
    res = recycling_rate_p1(128, 64, exact=True)
    assert res.rate == (1000 * 128 + 672 * 64) / (1000 * 192)
    assert res.leaked_bits == 20.992
    assert res.discard_bits == 21


def test_rate_p3_equals_rate_p1_everywhere():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 4096))
        m = int(rng.integers(1, 4096))
        assert recycling_rate_p3(n, m) == recycling_rate_p1(n, m)
        assert recycling_rate_p3(n, m, exact=True) == recycling_rate_p1(n, m, exact=True)


def test_rate_p2_round_case_is_exact():
    basis, split = recycling_rate_p2(256, 32)
    assert basis.rate == 0.9
    assert basis.leaked_bits == 25.6
    assert split.rate == 0.75
    assert split.leaked_bits == 64.0


def test_rate_p2_split_boundary_and_clamp():
    # n == 2m zeroes the split rate without clamping; n < 2m clamps
    _, split = recycling_rate_p2(128, 64)
    assert split.rate == 0.0 and not split.clamped
    _, split = recycling_rate_p2(64, 64)
    assert split.rate == 0.0 and split.clamped
    basis, _ = recycling_rate_p2(64, 64)
    assert not basis.clamped


def test_rate_p2_basis_clamp():
    basis, _ = recycling_rate_p2(8, 64)
    assert basis.rate == 0.0 and basis.clamped
    assert basis.discard_bits == 8  # capped at the key length


def test_rates_reject_bad_lengths():
    with pytest.raises(ConfigError):
        recycling_rate_p1(0, 4)
    with pytest.raises(ConfigError):
        recycling_rate_p2(4, 0)


def test_discard_counts():
    assert discard_counts("p1", 128, 64) == {"basis": 22, "split": None}
    assert discard_counts("p3", 128, 64) == {"basis": 22, "split": None}
    assert discard_counts("p2", 128, 64) == {"basis": 52, "split": 128}
    assert discard_counts("p2", 16, 64) == {"basis": 16, "split": 16}
    with pytest.raises(ConfigError):
        discard_counts("p7", 4, 4)


def test_leakage_summary():
    assert leakage_summary("p1", 128, 64) == {"basis": 21.12, "split": 0.0}
    assert leakage_summary("p1", 128, 64, exact=True) == {"basis": 20.992, "split": 0.0}
    assert leakage_summary("p2", 128, 64) == {"basis": 51.2, "split": 128.0}


def test_leakage_model_constants():
    assert LEAKAGE.value_leak_per_photon == 0.41
    assert LEAKAGE.basis_leak_per_known_value == 0.40
    assert LEAKAGE.max_value_guess_prob == 0.854


# ---------------------------------------------------------------------------
# Efficiency and key cost

def test_qubit_efficiency():
    assert qubit_efficiency("p2", 128, 64) == 0.5
    assert qubit_efficiency("p2", 7, 3) == 0.5
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 2048))
        m = int(rng.integers(1, 2048))
        assert qubit_efficiency("p1", n, m) == n / (2 * (n + m))
        assert qubit_efficiency("p3", n, m) == n / (2 * (n + m))


def test_psk_bits():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(1, 2048))
        m = int(rng.integers(1, 2048))
        l = int(rng.integers(0, 2048))
        assert psk_bits("p1", n, m, l) == n + m + l
        assert psk_bits("p3", n, m, l) == n + m + l
        assert psk_bits("p2", n, m, l) == 2 * (n + m + l)


def test_efficiency_guards():
    with pytest.raises(ConfigError):
        qubit_efficiency("p4", 4, 4)
    with pytest.raises(ConfigError):
        psk_bits("p1", 4, 4, -1)


# ---------------------------------------------------------------------------
# Transmission schedules

def test_protocol_schedule_costs():
    assert [ttc(protocol_schedule(p)) for p in PROTOCOL_IDS] == [2, 2, 3]
    assert [len(protocol_schedule(p)) for p in PROTOCOL_IDS] == [3, 4, 5]


def test_round_trip_schedule_waves():
    w = waves(protocol_schedule("p3"))
    assert w["blanks-alice"] == 1
    assert w["encoded-alice"] == 2
    assert w["announcement"] == 3


def test_parallel_events_share_a_wave():
    # classical and quantum transmissions in flight together cost 1 unit
    sched = TransmissionSchedule((
        Event("q", "quantum", "a", "b"),
        Event("c", "classical", "b", "a"),
    ))
    assert ttc(sched) == 1


def test_chain_costs_its_length():
    events = [Event("e0", "quantum", "a", "b")]
    for i in range(1, 9):
        events.append(Event(f"e{i}", "classical", "a", "b", deps=(f"e{i-1}",)))
    assert ttc(TransmissionSchedule(tuple(events))) == 9


def test_empty_schedule():
    assert ttc(TransmissionSchedule(())) == 0


def test_schedule_cycle_detection():
    sched = TransmissionSchedule((
        Event("a", "quantum", "x", "y", deps=("b",)),
        Event("b", "quantum", "y", "x", deps=("a",)),
    ))
    with pytest.raises(ScheduleCycleError):
        ttc(sched)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TransmissionSchedule((Event("a", "quantum", "x", "y", deps=("ghost",)),))
    with pytest.raises(ConfigError):
        TransmissionSchedule((Event("a", "quantum", "x", "y"),
                              Event("a", "classical", "x", "y")))
    with pytest.raises(ConfigError):
        Event("a", "telepathic", "x", "y")


def test_schedule_json_round_trip():
    for pid in PROTOCOL_IDS:
        sched = protocol_schedule(pid)
        again = schedule_from_json(schedule_to_json(sched))
        assert again == sched
        assert ttc(again) == ttc(sched)


def test_schedule_json_rejects_malformed():
    with pytest.raises(ConfigError):
        schedule_from_json("not json")
    with pytest.raises(ConfigError):
        schedule_from_json('{"id": "a"}')
    with pytest.raises(ConfigError):
        schedule_from_json('[{"id": "a"}]')


# ---------------------------------------------------------------------------
# Interception sweep

def closed_form(theta):
    # Derived by hand: the four encoding states sit at 0, 90, 45, 135
    # degrees, so the best-assignment accuracy of a measurement at theta is
    # 1/2 + (sqrt(2)/4) |sin(2 theta + pi/4)|.
    return 0.5 + np.sqrt(2.0) / 4.0 * abs(np.sin(2.0 * theta + np.pi / 4.0))


def test_value_guess_accuracy_matches_closed_form():
    for theta in np.linspace(0.0, np.pi, 97):
        assert abs(value_guess_accuracy(theta) - closed_form(theta)) < 1e-12


def test_guess_accuracy_landmarks():
    assert abs(value_guess_accuracy(0.0) - 0.75) < 1e-12
    assert abs(value_guess_accuracy(np.pi / 4) - 0.75) < 1e-12
    assert abs(value_guess_accuracy(np.pi / 8) - np.cos(np.pi / 8) ** 2) < 1e-12
    assert abs(value_guess_accuracy(3 * np.pi / 8) - 0.5) < 1e-12


def test_sweep_curve_shape():
    thetas, acc = guess_probability_curve(720)
    assert thetas.shape == (720,) and acc.shape == (720,)
    assert thetas[0] == 0.0 and thetas[-1] < np.pi
    assert np.all(acc >= 0.5 - 1e-12) and np.all(acc <= 1.0)
    np.testing.assert_allclose(acc, [closed_form(t) for t in thetas], atol=1e-12)


def test_oracle_maximum():
    best = breidbart_bound_oracle()
    assert abs(best.probability - np.cos(np.pi / 8) ** 2) < 1e-12
    assert abs(best.angle - np.pi / 8) < 1e-12
    # grids that are not a multiple of 8 still meet the 1e-4 contract
    off = breidbart_bound_oracle(1000)
    assert abs(off.probability - np.cos(np.pi / 8) ** 2) < 1e-4


def test_sweep_grid_floor():
    with pytest.raises(ConfigError):
        guess_probability_curve(359)
    with pytest.raises(ConfigError):
        breidbart_bound_oracle(100)
    breidbart_bound_oracle(360)  # the floor itself is fine


# ---------------------------------------------------------------------------
# Reports and comparisons

def test_reference_rows():
    by_id = {r.id: r for r in REFERENCE_PROTOCOLS}
    assert by_id["hwang-lqkd"].qe == "1/9" and by_id["hwang-lqkd"].ttc == 5
    assert by_id["li-aqkd"].psk == "3(n+m)" and by_id["li-aqkd"].ttc == 2
    assert by_id["tsai-aqkd"].qe == "1/4" and by_id["tsai-aqkd"].psk == "2n"
    assert by_id["tsai-aqkd"].ttc == 3


def test_build_report_p1():
    rep = build_report("p1", 128, 64, 128)
    doc = rep.to_dict()
    assert doc["qubit_efficiency"] == 128 / 384
    assert doc["pre_shared_key_bits"] == 320
    assert doc["transmission_time_cost"] == 2
    assert doc["recycling"]["basis"] == 0.89
    assert doc["recycling"]["split"] is None
    assert doc["leakage_bits"]["basis"] == 21.12
    assert doc["profile"]["quantum_resources"] == "Single photon"


def test_build_report_p2():
    rep = build_report("p2", 128, 64, 128)
    doc = rep.to_dict()
    assert doc["qubit_efficiency"] == 0.5
    assert doc["pre_shared_key_bits"] == 640
    assert doc["transmission_time_cost"] == 2
    assert doc["recycling"]["basis"] == 0.6
    assert doc["recycling"]["split"] == 0.0
    assert doc["recycling"]["split_clamped"] is False


def test_build_report_p3_exact_flag():
    plain = build_report("p3", 128, 64, 128)
    exact = build_report("p3", 128, 64, 128, exact=True)
    assert plain.recycling["basis"] == 0.89
    assert exact.recycling["basis"] == (1000 * 128 + 672 * 64) / 192000
    assert plain.ttc == exact.ttc == 3


def test_report_is_json_ready():
    doc = build_report("p2", 64, 16, 32).to_dict()
    json.dumps(doc)  # no numpy scalars allowed through


def test_format_comparison():
    reports = [build_report(p, 128, 64, 128) for p in PROTOCOL_IDS]
    text = format_comparison(reports)
    lines = text.splitlines()
    assert lines[0].split()[:4] == ["metric", "p1", "p2", "p3"]
    assert any(row.startswith("QE") for row in lines)
    assert any(row.startswith("TTC") for row in lines)
    assert "Hwang" in text and "Tsai" in text
    bare = format_comparison(reports, include_references=False)
    assert "Hwang" not in bare
