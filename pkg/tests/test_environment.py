"""Environment tests: tools, latency, state replay correctness."""

import random

import pytest

from specagent.environment import (
    FixedLatency,
    MissingDependencyError,
    Mutation,
    SimState,
    ToolRuntimeError,
    UniformLatency,
    UnknownToolError,
    answer_correct,
    default_registry,
    demo_state,
    execute,
    latency_from_config,
    replay_ground_truth,
    resolve_refs,
    state_correct,
)
from specagent.protocol import Arg, Ref, ToolCall
from specagent.taskgraph import Safety


def gt(pos, name, *values):
    return ToolCall(pos, name, tuple(Arg(v) for v in values))


def test_get_contact_read_leaves_state():
    reg = default_registry()
    state = demo_state()
    before = state.copy()
    obs, latency, mutation = execute(
        reg.get("get_contact"), ["Alice"], state, random.Random(0)
    )
    assert obs == "alice@example.com"
    assert 0.5 <= latency <= 1.0
    assert mutation is None
    assert state.tables == before.tables


def test_send_message_records_write():
    reg = default_registry()
    state = demo_state()
    obs, _, mutation = execute(
        reg.get("send_message"), ["a@x.com", "hi"], state, random.Random(0)
    )
    assert obs == "message sent to a@x.com"
    state.apply(mutation)
    assert state.rows("messages_sent") == [{"recipient": "a@x.com", "body": "hi"}]


def test_read_miss_no_mutation():
    reg = default_registry()
    state = demo_state()
    obs, _, mutation = execute(reg.get("get_contact"), ["Nobody"], state, random.Random(0))
    assert "no contact" in obs
    assert mutation is None


def test_handler_failure_becomes_observation():
    reg = default_registry()
    obs, _, mutation = execute(reg.get("send_message"), [], demo_state(), random.Random(0))
    assert obs.startswith("tool error:")
    assert mutation is None


def test_resolve_refs():
    args = (Arg(Ref(1)), Arg("hi"))
    assert resolve_refs(args, {1: "a@x.com"}) == ["a@x.com", "hi"]
    assert resolve_refs((Arg("x"),), {}) == ["x"]
    with pytest.raises(MissingDependencyError):
        resolve_refs((Arg(Ref(2)),), {1: "y"})


def test_unknown_tool():
    with pytest.raises(UnknownToolError):
        default_registry().get("frobnicate")


def test_latency_models():
    assert latency_from_config({"kind": "fixed", "seconds": 0.8}) == FixedLatency(0.8)
    assert latency_from_config({"kind": "uniform", "low": 0.5, "high": 1.0}) == UniformLatency(0.5, 1.0)
    assert latency_from_config(0.25) == FixedLatency(0.25)
    rng = random.Random(3)
    m = UniformLatency(0.5, 1.0)
    draws = [m.draw(rng) for _ in range(50)]
    assert all(0.5 <= d <= 1.0 for d in draws)
    rng2 = random.Random(3)
    assert draws == [m.draw(rng2) for _ in range(50)]  # seeded reproducibility


def test_state_correct_read_only():
    reg = default_registry()
    initial = demo_state()
    achieved = demo_state()
    assert state_correct(initial, achieved, [gt(1, "get_contact", "Alice")], reg)


def test_state_correct_matching_write():
    reg = default_registry()
    initial = demo_state()
    achieved = demo_state()
    achieved.apply(Mutation("messages_sent", {"recipient": "alice@example.com", "body": "hi"}))
    calls = [gt(1, "get_contact", "Alice"), ToolCall(2, "send_message", (Arg(Ref(1)), Arg("hi")))]
    assert state_correct(initial, achieved, calls, reg)


def test_state_correct_detects_wrong_recipient():
    reg = default_registry()
    initial = demo_state()
    achieved = demo_state()
    achieved.apply(Mutation("messages_sent", {"recipient": "bob@example.com", "body": "hi"}))
    calls = [gt(1, "get_contact", "Alice"), ToolCall(2, "send_message", (Arg(Ref(1)), Arg("hi")))]
    assert not state_correct(initial, achieved, calls, reg)


def test_state_correct_reflexive_and_order_insensitive():
    reg = default_registry()
    initial = demo_state()
    calls = [
        gt(1, "send_message", "a@x.com", "one"),
        gt(2, "send_message", "b@x.com", "two"),
    ]
    replayed = replay_ground_truth(initial, calls, reg)
    assert state_correct(initial, replayed, calls, reg)
    swapped = replay_ground_truth(initial, list(reversed(calls)), reg)
    assert state_correct(initial, swapped, calls, reg)  # commuting writes


def test_replay_resolves_refs_between_calls():
    reg = default_registry()
    state = replay_ground_truth(
        demo_state(),
        [gt(1, "get_contact", "Bob"), ToolCall(2, "send_message", (Arg(Ref(1)), Arg("yo")))],
        reg,
    )
    assert state.rows("messages_sent") == [
        {"recipient": "bob@example.com", "body": "yo"}
    ]


def test_safe_tools_never_mutate_fuzzed():
    reg = default_registry()
    rng = random.Random(7)
    arg_pool = ["Alice", "paris", "notes.txt", "bogus", "", "x y z"]
    for name, spec in reg.specs.items():
        if spec.safety != Safety.SAFE:
            continue
        for _ in range(30):
            state = demo_state()
            before = state.snapshot(tuple(state.tables))
            args = [rng.choice(arg_pool) for _ in range(rng.randint(0, 3))]
            try:
                _, _, mutation = execute(spec, args, state, rng)
            except ToolRuntimeError:
                continue
            assert mutation is None
            assert state.snapshot(tuple(state.tables)) == before


def test_answer_correct():
    assert answer_correct("The answer is Paris.", "Paris")
    assert answer_correct("paris", "Paris")
    assert not answer_correct("Lyon", "Paris")
    assert not answer_correct("", "Paris")


def test_registry_manifest_roundtrip(tmp_path):
    manifest = tmp_path / "tools.yaml"
    manifest.write_text(
        """
tools:
  - name: probe
    safety: safe
    latency: {kind: fixed, seconds: 0.1}
    handler: specagent.environment:get_contact_handler
"""
    )
    from specagent.environment import load_registry

    reg = load_registry(manifest)
    assert "probe" in reg
    spec = reg.get("probe")
    assert spec.safety == Safety.SAFE
    assert spec.latency_model == FixedLatency(0.1)
