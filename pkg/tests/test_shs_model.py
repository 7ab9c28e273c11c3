import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoijoint import disciplines as disc
from aoijoint.errors import ModelError
from aoijoint.shs_model import (
    ResetMap,
    ShsModel,
    Transition,
    build,
    dumps_model,
    incoming,
    load_model,
    loads_model,
    outgoing,
    save_model,
    validate,
)


@st.composite
def models(draw):
    nq = draw(st.integers(1, 4))
    n = draw(st.integers(1, 4))
    count = draw(st.integers(0, 8))
    rows = []
    for i in range(count):
        cols = draw(st.lists(st.one_of(st.none(), st.integers(0, n - 1)), min_size=n, max_size=n))
        rate = draw(st.floats(0.01, 50, allow_nan=False))
        rows.append((i + 1, draw(st.integers(0, nq - 1)), draw(st.integers(0, nq - 1)), rate, cols))
    return build(nq, n, rows)


def test_np_model_valid(sym2):
    assert validate(disc.build_model(sym2, "np")) == []


def test_two_ones_in_column():
    m = np.eye(2, dtype=int)
    m[0, 1] = 1
    model = ShsModel(1, 2, (Transition(7, 0, 0, 1.0, ResetMap(m)),))
    problems = validate(model)
    assert len(problems) == 1
    assert problems[0].transition_id == 7
    assert "column 1" in problems[0].reason


def test_non_binary_entry():
    model = ShsModel(1, 2, (Transition(1, 0, 0, 1.0, ResetMap(2 * np.eye(2, dtype=int))),))
    assert any("other than 0 and 1" in v.reason for v in validate(model))


def test_zero_rate():
    model = build(2, 1, [(1, 0, 1, 0.0, [0])])
    assert [v.reason for v in validate(model)] == ["non-positive rate 0.0"]


def test_bad_state_and_dimension():
    model = ShsModel(2, 2, (Transition(1, 0, 5, 1.0, ResetMap.identity(3)),))
    reasons = " ".join(v.reason for v in validate(model))
    assert "target state 5" in reasons and "age_dim is 2" in reasons
    with pytest.raises(ModelError):
        model.require_valid()


def test_duplicate_ids():
    model = build(1, 1, [(1, 0, 0, 1.0, [0]), (1, 0, 0, 2.0, [0])])
    assert any("duplicate" in v.reason for v in validate(model))


def test_sa_incoming_state1(sym2):
    model = disc.build_model(sym2, "sa")
    assert sorted(t.id for t in incoming(model, 1)) == [1, 3]


def test_np_outgoing_state0(sym2):
    model = disc.build_model(sym2, "np")
    out = outgoing(model, 0)
    assert sorted(t.id for t in out) == [1, 3]
    assert sum(t.rate for t in out) == pytest.approx(sym2.lam)


def test_empty_model_lists():
    model = ShsModel(2, 1, ())
    assert outgoing(model, 0) == [] and incoming(model, 1) == []


def test_invalid_state_query():
    with pytest.raises(ModelError):
        outgoing(ShsModel(2, 1, ()), 2)


@given(models())
def test_partition_counts(model):
    total_out = sum(len(outgoing(model, q)) for q in range(model.num_states))
    total_in = sum(len(incoming(model, q)) for q in range(model.num_states))
    assert total_out == total_in == len(model.transitions)


@given(models())
def test_self_transition_in_both_lists(model):
    for t in model.transitions:
        if t.source == t.target:
            assert t in outgoing(model, t.source) and t in incoming(model, t.source)


@given(models())
def test_validate_idempotent(model):
    before = dumps_model(model)
    assert validate(model) == validate(model)
    assert dumps_model(model) == before


@given(models())
def test_file_roundtrip(model):
    assert loads_model(dumps_model(model)) == model


def test_file_roundtrip_on_disk(tmp_path, sym2):
    model = disc.build_model(sym2, "ps")
    path = tmp_path / "ps.json"
    save_model(model, path)
    assert load_model(path) == model


def test_generator_self_transitions_cancel(sym2):
    g = disc.build_model(sym2, "sa").generator()
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)
    assert g[1, 1] == -1.0  # only the delivery leaves state 1


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("not json", "not valid JSON"),
        ("[]", "JSON object"),
        ('{"num_states": 1, "age_dim": 1}', "transitions"),
        ('{"num_states": 1, "age_dim": 2, "transitions": [{"id": 1, "source": 0, "target": 0, "rate": 1, "reset": [0]}]}', "2 columns"),
        ('{"num_states": 1, "age_dim": 1, "transitions": [{"id": 1, "source": 0, "target": 0, "rate": 1, "reset": [3]}]}', "outside"),
        ('{"num_states": 1.5, "age_dim": 1, "transitions": []}', "integer"),
    ],
)
def test_load_errors(text, fragment):
    with pytest.raises(ModelError, match=fragment):
        loads_model(text)
