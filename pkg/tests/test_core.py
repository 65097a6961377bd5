import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from selfroute.core import (
    CapabilityTrace,
    Pool,
    RoutingOutcome,
    Scenario,
    TraceFormatError,
    TraceSet,
    load_trace_set,
    serialize_trace_set,
    validate_pool,
    validate_scenario,
)


def test_reference_pool_is_valid(reference_pool):
    assert validate_pool(reference_pool) == []


def test_single_agent_pool_is_valid():
    pool = Pool.from_costs([0.5])
    assert validate_pool(pool) == []
    assert pool.fallback.id == pool.by_rank(pool.entry_rank).id


def test_cost_tie_is_a_violation():
    problems = validate_pool(Pool.from_costs([0.2, 0.2]))
    assert len(problems) == 1
    assert "a2" in problems[0] and "non-strict" in problems[0]


@pytest.mark.parametrize(
    "pool, needle",
    [
        (Pool.from_costs([0.1, 1.5]), "outside [0, 1]"),
        (Pool.from_costs([0.1, 0.2], ids=["x", "x"]), "duplicate id"),
        (Pool.from_costs([0.1, 0.2], entry_rank=3), "entry_rank"),
        (Pool(agents=()), "empty"),
    ],
)
def test_pool_violations(pool, needle):
    assert any(needle in v for v in validate_pool(pool))


def test_scenarios_pin_alpha():
    assert Scenario.named("performance_first").alpha == 0.2
    assert Scenario.named("balance").alpha == 0.5
    assert Scenario.named("cost_first").alpha == 0.8
    assert Scenario.named("balance").gamma == 0.5
    with pytest.raises(ValueError):
        Scenario(name="balance", alpha=0.3)
    with pytest.raises(ValueError):
        Scenario(name="custom", alpha=0.3, gamma=0.0)
    assert Scenario.from_alpha(0.3).name == "custom"
    assert Scenario.from_alpha(0.8).name == "cost_first"


def test_alpha_zero_is_flagged():
    assert validate_scenario(Scenario.from_alpha(0.0))
    assert validate_scenario(Scenario.named("balance")) == []


def _records(n_queries=2, n_agents=2, n_samples=10):
    recs = []
    for q in range(n_queries):
        for a in range(n_agents):
            recs.append({"query_id": f"q{q}", "agent_id": f"a{a}",
                         "samples": [(q + a + s) % 2 for s in range(n_samples)], "greedy": 1})
    return "\n".join(json.dumps(r) for r in recs) + "\n"


def test_load_shape():
    ts = load_trace_set(_records().encode())
    assert len(ts) == 4
    assert ts.query_ids() == ["q0", "q1"]
    assert ts.agent_ids() == ["a0", "a1"]


def test_frequency_is_exact_rational():
    ts = load_trace_set('{"query_id": "q", "agent_id": "a", "samples": [1,0,1], "greedy": 1}')
    t = ts.get("q", "a")
    assert t.frequency == Fraction(2, 3)
    assert t.greedy_correct is True


def test_duplicate_key_names_pair():
    line = '{"query_id": "q1", "agent_id": "a1", "samples": [1], "greedy": 1}\n'
    with pytest.raises(TraceFormatError) as err:
        load_trace_set(line * 2)
    assert err.value.line_no == 2
    assert "q1" in str(err.value) and "a1" in str(err.value)


@pytest.mark.parametrize(
    "bad, reason",
    [
        ("{not json", "invalid JSON"),
        ('{"query_id": "q", "agent_id": "a", "samples": [], "greedy": 1}', "n_samples = 0"),
        ('{"query_id": "q", "agent_id": "a", "samples": [2], "greedy": 1}', "0 or 1"),
        ('{"query_id": "q", "agent_id": "a", "samples": [1]}', "greedy"),
        ('{"query_id": 3, "agent_id": "a", "samples": [1], "greedy": 1}', "strings"),
    ],
)
def test_malformed_line_reports_line_number(bad, reason):
    good = '{"query_id": "ok", "agent_id": "a", "samples": [1], "greedy": 0}'
    with pytest.raises(TraceFormatError) as err:
        load_trace_set(good + "\n\n" + bad + "\n")
    assert err.value.line_no == 3
    assert reason in err.value.reason


def test_empty_samples_rejected_at_construction():
    with pytest.raises(ValueError):
        CapabilityTrace("q", "a", (), True)


trace_records = st.lists(
    st.tuples(
        st.text(min_size=1, max_size=5),
        st.sampled_from(["a1", "a2", "é"]),
        st.lists(st.booleans(), min_size=1, max_size=12),
        st.booleans(),
    ),
    max_size=20,
    unique_by=lambda r: (r[0], r[1]),
)


@given(trace_records)
def test_round_trip_is_canonical(records):
    ts = TraceSet(CapabilityTrace(q, a, tuple(s), g) for q, a, s, g in records)
    text = serialize_trace_set(ts)
    again = load_trace_set(text.encode("utf-8"))
    assert again == ts
    assert serialize_trace_set(again) == text
    for t in again:
        assert 0 <= t.frequency <= 1
        assert t.frequency.denominator <= t.n_samples


def test_outcome_record_round_trip():
    from selfroute.core import RoutingDecision

    o = RoutingOutcome("q", ("a1", "a2"), "a2", True, 0.2, 0.005, 0.205, 1.0,
                       (RoutingDecision("reject", 0.1, 0.7), RoutingDecision("answer", 0.9, 0.7)))
    assert RoutingOutcome.from_record(json.loads(json.dumps(o.to_record()))) == o
