"""Wire-format tests: parsing, rendering, round-trips, chunking stability."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specagent.protocol import (
    Answer,
    Arg,
    CancelNotice,
    ErrorNotice,
    FinalQueryUpdate,
    Information,
    Malformed,
    PartialQueryUpdate,
    Pause,
    PlanEntry,
    PlanHint,
    Ref,
    Remove,
    Think,
    ToolCall,
    parse_events_incremental,
    parse_incremental,
    parse_tool_body,
    render_event,
    roundtrip_check,
    serialize_action,
    serialize_actions,
    serialize_events,
)

# ---------------------------------------------------------------------------
# Action parsing
# ---------------------------------------------------------------------------


def test_parse_think_then_tool_call():
    res = parse_incremental(
        '<think>need contact first</think><tool_call>1. get_contact("Alice")</tool_call>'
    )
    assert res.malformed is None
    assert res.remainder == ""
    assert res.actions == [
        Think("need contact first"),
        ToolCall(1, "get_contact", (Arg("Alice"),)),
    ]


def test_parse_remove():
    res = parse_incremental("<think>done editing</think><tool_call>REMOVE 2.</tool_call>")
    assert res.actions == [Think("done editing"), Remove(2)]
    assert res.malformed is None


def test_incomplete_trailing_tag_is_remainder():
    res = parse_incremental("<think>waiting</think><pau")
    assert res.actions == [Think("waiting")]
    assert res.remainder == "<pau"
    assert res.malformed is None


def test_missing_id_prefix_is_malformed():
    res = parse_incremental("<think>x</think><tool_call>foo()</tool_call>")
    assert res.actions == [Think("x")]
    assert isinstance(res.malformed, Malformed)
    assert "missing id prefix" in res.malformed.message


def test_zero_id_rejected():
    res = parse_incremental("<tool_call>0. foo()</tool_call>")
    assert res.malformed is not None


def test_unknown_tag_is_malformed():
    res = parse_incremental("<bogus>")
    assert res.malformed is not None
    assert res.malformed.message == "unknown tag"


def test_text_outside_tags_is_malformed():
    res = parse_incremental("hello <think>a</think>")
    assert res.malformed is not None


def test_pause_parses_alone():
    res = parse_incremental("<pause>")
    assert res.actions == [Pause()]


def test_args_grammar():
    body = '3. f("a b", key=7, flag=true, $2, 1.5, -4)'
    call = parse_tool_body(body)
    assert call == ToolCall(
        3,
        "f",
        (
            Arg("a b"),
            Arg(7, key="key"),
            Arg(True, key="flag"),
            Arg(Ref(2)),
            Arg(1.5),
            Arg(-4),
        ),
    )


def test_string_escapes_roundtrip():
    call = ToolCall(1, "f", (Arg('he said "hi"\n\tdone\\'),))
    text = serialize_action(call)
    res = parse_incremental("<think>t</think>" + text)
    assert res.actions == [Think("t"), call]


def test_remove_is_case_sensitive_whole_body():
    assert parse_incremental("<tool_call>remove 2.</tool_call>").malformed is not None
    assert parse_incremental("<tool_call>REMOVE 2. extra</tool_call>").malformed is not None


def test_id_requires_space_before_name():
    res = parse_incremental("<tool_call>1.foo()</tool_call>")
    assert res.malformed is not None


def test_whitespace_tolerated_inside_tool_call():
    res = parse_incremental('<tool_call>  1.  f( "x" , 2 )  </tool_call>')
    assert res.malformed is None
    assert res.actions == [ToolCall(1, "f", (Arg("x"), Arg(2)))]


# ---------------------------------------------------------------------------
# Round-trips
# ---------------------------------------------------------------------------


def test_roundtrip_trivial():
    assert roundtrip_check([Think("a"), Pause()])
    assert roundtrip_check([Think(""), Answer("42")])


_NAMES = ["get_contact", "send_message", "f", "search_web", "x_1"]


def random_text(rng, allow_empty=True):
    words = ["alpha", "beta", "gamma", "42", "x,y", "a=b", "(paren)", "$5"]
    n = rng.randint(0 if allow_empty else 1, 5)
    return " ".join(rng.choice(words) for _ in range(n))


def random_string_literal(rng):
    chars = 'abc XYZ 0123 _,.!?"\\\n\t$()='
    return "".join(rng.choice(chars) for _ in range(rng.randint(0, 10)))


def random_value(rng, max_ref):
    k = rng.randint(0, 4)
    if k == 0:
        return random_string_literal(rng)
    if k == 1:
        return rng.randint(-1000, 1000)
    if k == 2:
        return rng.choice([True, False])
    if k == 3 and max_ref >= 1:
        return Ref(rng.randint(1, max_ref))
    return round(rng.uniform(-100, 100), rng.randint(0, 6))


def random_call(rng, call_id):
    args = []
    for _ in range(rng.randint(0, 4)):
        key = rng.choice([None, "key", "name", "to"])
        args.append(Arg(random_value(rng, max_ref=call_id - 1), key=key))
    return ToolCall(call_id, rng.choice(_NAMES), tuple(args))


def random_step(rng, next_id):
    think = Think(random_text(rng))
    k = rng.randint(0, 3)
    if k == 0:
        return [think, random_call(rng, next_id)], next_id + 1
    if k == 1:
        return [think, Pause()], next_id
    if k == 2:
        return [think, Answer(random_text(rng))], next_id
    return [think, Remove(rng.randint(1, max(1, next_id - 1)))], next_id


def random_actions(rng):
    actions = []
    next_id = 1
    for _ in range(rng.randint(1, 6)):
        step, next_id = random_step(rng, next_id)
        actions.extend(step)
    return actions


def test_roundtrip_generated_sequences():
    rng = random.Random(7)
    for _ in range(1000):
        actions = random_actions(rng)
        assert roundtrip_check(actions), actions


def test_chunked_parse_matches_whole_parse():
    rng = random.Random(11)
    for _ in range(300):
        actions = random_actions(rng)
        text = serialize_actions(actions)
        whole = parse_incremental(text)
        # random chunking with the consume-and-continue discipline
        buffer = ""
        collected = []
        i = 0
        while i < len(text):
            step = rng.randint(1, 7)
            buffer += text[i : i + step]
            i += step
            res = parse_incremental(buffer)
            assert res.malformed is None
            collected.extend(res.actions)
            buffer = res.remainder
        assert buffer == ""
        assert collected == whole.actions == actions


# ---------------------------------------------------------------------------
# Event rendering and parsing
# ---------------------------------------------------------------------------


def test_render_partial_update():
    ev = PartialQueryUpdate("send a message to")
    assert render_event(ev) == "<partial_query_update>send a message to</partial_query_update>"


def test_render_information_interrupted():
    ev = Information(1, "alice@example.com", interrupted=True)
    assert render_event(ev) == (
        "</think_interrupted><information> 1. alice@example.com</information>"
    )


def test_render_cancel():
    ev = CancelNotice(3, "superseded by query revision")
    assert render_event(ev) == "<cancel> 3. superseded by query revision</cancel>"


def test_render_rejects_id_zero():
    with pytest.raises(ValueError):
        render_event(Information(0, "x"))
    with pytest.raises(ValueError):
        render_event(CancelNotice(0, "x"))


def test_plan_hint_rendering():
    hint = PlanHint(
        (
            PlanEntry(1, "get_contact", (Arg("Alice"),), "X"),
            PlanEntry(2, "send_message", (Arg(Ref(1)), Arg("hi")), "H"),
        )
    )
    assert render_event(hint) == (
        "<current_plan>\n 1. get_contact(\"Alice\") [X]"
        "\n 2. send_message($1, \"hi\") [H]\n</current_plan>"
    )


def random_event(rng, issued_max=9):
    k = rng.randint(0, 5)
    interrupted = rng.random() < 0.3
    if k == 0:
        return PartialQueryUpdate(random_text(rng), interrupted)
    if k == 1:
        return FinalQueryUpdate(random_text(rng), interrupted)
    if k == 2:
        return Information(rng.randint(1, issued_max), random_text(rng), interrupted)
    if k == 3:
        return CancelNotice(rng.randint(1, issued_max), random_text(rng), interrupted)
    if k == 4:
        calls = tuple(
            PlanEntry(
                i + 1,
                rng.choice(_NAMES),
                tuple(Arg(random_value(rng, max_ref=i)) for _ in range(rng.randint(0, 3))),
                rng.choice("IHXC"),
            )
            for i in range(rng.randint(0, 3))
        )
        return PlanHint(calls, interrupted)
    return ErrorNotice(random_text(rng), interrupted)


def test_event_roundtrip_generated():
    rng = random.Random(23)
    for _ in range(1000):
        events = [random_event(rng) for _ in range(rng.randint(1, 5))]
        text = serialize_events(events)
        parsed, remainder, malformed = parse_events_incremental(text)
        assert malformed is None
        assert remainder == ""
        assert parsed == events


def test_event_chunked_parse():
    rng = random.Random(29)
    for _ in range(200):
        events = [random_event(rng) for _ in range(rng.randint(1, 4))]
        text = serialize_events(events)
        buffer = ""
        collected = []
        i = 0
        while i < len(text):
            step = rng.randint(1, 9)
            buffer += text[i : i + step]
            i += step
            parsed, buffer, malformed = parse_events_incremental(buffer)
            assert malformed is None
            collected.extend(parsed)
        assert buffer == ""
        assert collected == events


def test_render_event_injective_on_generated_events():
    rng = random.Random(31)
    seen = {}
    for _ in range(3000):
        ev = random_event(rng)
        text = render_event(ev)
        if text in seen:
            assert seen[text] == ev
        seen[text] = ev


# ---------------------------------------------------------------------------
# Hypothesis: serialize/parse identity over simple structured steps
# ---------------------------------------------------------------------------

_ident = st.from_regex(r"[a-z_][a-z0-9_]{0,8}", fullmatch=True)
_strings = st.text(
    alphabet=st.characters(blacklist_characters='"\\<>', blacklist_categories=("Cs",)),
    max_size=12,
)
_values = st.one_of(
    _strings,
    st.integers(min_value=-10**6, max_value=10**6),
    st.booleans(),
)


@st.composite
def steps(draw):
    think = Think(draw(_strings))
    args = tuple(Arg(draw(_values)) for _ in range(draw(st.integers(0, 3))))
    action = draw(
        st.sampled_from(["call", "pause", "answer", "remove"])
    )
    if action == "call":
        second = ToolCall(draw(st.integers(1, 99)), draw(_ident), args)
    elif action == "pause":
        second = Pause()
    elif action == "answer":
        second = Answer(draw(_strings))
    else:
        second = Remove(draw(st.integers(1, 99)))
    return [think, second]


@given(st.lists(steps(), min_size=1, max_size=4))
@settings(max_examples=200)
def test_hypothesis_roundtrip(step_list):
    actions = [a for step in step_list for a in step]
    assert roundtrip_check(actions)
