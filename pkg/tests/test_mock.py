"""The offline mock service: role dispatch and exact per-role behavior."""

import pytest

from stratinv.chat import ChatTurnRequest
from stratinv.errors import ServiceError, UnrecognizedRole
from stratinv.mock import LabelRule, MockStructuredLm
from stratinv.ooc import (
    ADD_MARKER,
    LABEL_MARKER,
    OBFUSCATE_MARKER,
    REWRITE_MARKER,
    STRATIFIER_MARKER,
    TEXT_SECTION,
)


def turn(text, temperature=0.0, seed=None):
    return ChatTurnRequest(
        messages=(("user", text),), temperature=temperature, seed=seed
    )


def obf_request(payload, **kw):
    return turn(f"{OBFUSCATE_MARKER}, please.\n{TEXT_SECTION}{payload}", **kw)


def add_request(instruction_tail, payload, **kw):
    return turn(f"{ADD_MARKER}. {instruction_tail}\n{TEXT_SECTION}{payload}", **kw)


def label_request(payload, options="0, 1"):
    return turn(
        f"Classify.\n\n{TEXT_SECTION}{payload}\n\n{LABEL_MARKER} {options}. "
        "Answer with the option only."
    )


def mock(**kw):
    kw.setdefault("contexts", ("male", "female"))
    return MockStructuredLm(**kw)


def test_unrecognized_role():
    with pytest.raises(UnrecognizedRole, match="hello world"):
        mock().complete(turn("hello world\nmore text"))


def test_missing_text_section():
    with pytest.raises(ServiceError, match="## Text"):
        mock().complete(turn(f"{OBFUSCATE_MARKER} but no payload"))


def test_obfuscate_drops_context_token():
    assert mock().complete(obf_request("ctx=male topic=1 some tail")) == (
        "topic=1 some tail"
    )


def test_obfuscate_passes_other_text_verbatim():
    # nothing to change: the raw payload comes back, odd spacing included
    payload = "topic=1   double  spaced tail "
    assert mock().complete(obf_request(payload)) == payload


def test_add_inserts_named_context_at_front():
    out = mock().complete(add_request("Set the marker to female.", "topic=1 tail"))
    assert out == "ctx=female topic=1 tail"


def test_add_replaces_existing_context():
    out = mock().complete(
        add_request("Set the marker to female.", "ctx=male topic=1")
    )
    assert out == "ctx=female topic=1"


def test_add_takes_first_context_mention():
    out = mock().complete(
        add_request("Replace male, female mentions; use female.", "topic=1")
    )
    assert out == "ctx=male topic=1"


def test_rewrite_takes_last_context_mention():
    # the single-pass instruction lists every context before the target one
    req = turn(
        f"{REWRITE_MARKER}. Replace male, female mentions; use female.\n"
        f"{TEXT_SECTION}ctx=male topic=1"
    )
    assert mock().complete(req) == "ctx=female topic=1"


def test_add_without_context_mention_fails():
    with pytest.raises(ServiceError, match="no context value"):
        mock().complete(add_request("Set the marker, please.", "topic=1"))


def test_longest_context_value_wins():
    client = mock(contexts=("unknown", "unknown or undisclosed"))
    long_hit = client.complete(
        add_request("Set it to unknown or undisclosed.", "topic=1")
    )
    assert long_hit == "ctx=unknown or undisclosed topic=1"
    short_hit = client.complete(add_request("Set it to unknown.", "topic=1"))
    assert short_hit == "ctx=unknown topic=1"


def test_pad_varies_with_seed_at_positive_temperature():
    client = mock()
    payload = "ctx=male pad=0 tail"
    assert client.complete(obf_request(payload)) == "pad=0 tail"
    assert client.complete(obf_request(payload, temperature=0.7)) == "pad=0 tail"
    hot = client.complete(obf_request(payload, temperature=0.7, seed=42))
    assert hot == "pad=r42 tail"
    re_added = client.complete(
        add_request("Set the marker to male.", "pad=0 tail", temperature=0.7, seed=5)
    )
    assert re_added == "ctx=male pad=r5 tail"


def test_label_rules_first_match_wins():
    client = mock(
        label_rules=[
            {"if": {"kind": "amb"}, "label": "1"},
            {"read": "topic", "map": {"0": "no", "1": "yes"}, "default": "dunno"},
        ]
    )
    assert client.complete(label_request("kind=amb topic=0")) == "1"
    assert client.complete(label_request("kind=clear topic=0")) == "no"
    assert client.complete(label_request("kind=clear topic=1")) == "yes"
    assert client.complete(label_request("kind=clear topic=9")) == "dunno"
    assert client.complete(label_request("kind=clear")) == "dunno"


def test_label_read_without_map_is_identity():
    client = mock(label_rules=[{"read": "topic"}])
    assert client.complete(label_request("topic=1")) == "1"
    assert client.complete(label_request("other=2")) == "unknown"


def test_label_no_matching_rule():
    client = mock(label_rules=[{"if": {"kind": "amb"}, "label": "1"}])
    assert client.complete(label_request("kind=clear topic=1")) == "unknown"
    assert mock().complete(label_request("topic=1")) == "unknown"


def test_label_rule_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown label rule keys"):
        LabelRule.from_dict({"iff": {"kind": "amb"}, "label": "1"})


def strat_request(payload):
    return turn(
        f"{STRATIFIER_MARKER}. Which kind?\n\n{TEXT_SECTION}{payload}\n\n"
        f"{LABEL_MARKER} amb, clear. Answer with the option only."
    )


def test_stratifier_reads_configured_token():
    assert mock().complete(strat_request("s=clear1 topic=1")) == "clear1"
    keyed = mock(stratum_key="kind")
    assert keyed.complete(strat_request("kind=amb s=x")) == "amb"


def test_stratifier_default_and_fallback():
    assert mock(default_stratum="clear").complete(strat_request("topic=1")) == "clear"
    assert mock().complete(strat_request("topic=1")) == "unknown"


def test_for_task_wiring():
    from stratinv.ooc import builtin_task

    cfg = builtin_task(
        "bios", mock={"label_rules": [{"read": "job"}], "stratum_key": "s"}
    )
    client = MockStructuredLm.for_task(cfg)
    assert client.complete(label_request("job=surgeon")) == "surgeon"
    bare = MockStructuredLm.for_task(builtin_task("bios"))
    assert bare.complete(label_request("job=surgeon")) == "unknown"
    with pytest.raises(ValueError, match="unknown mock config keys"):
        MockStructuredLm.for_task(builtin_task("bios", mock={"rules": []}))


def test_mock_requires_contexts():
    with pytest.raises(ValueError, match="at least one"):
        MockStructuredLm(contexts=())
