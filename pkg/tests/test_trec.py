import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckqti.trec import RunFormatError, format_qrels, format_run, parse_qrels, parse_run


def test_format_and_parse():
    run = {"q2": [("d9", 1.5)], "q1": [("d1", 3.0), ("d2", 2.25)]}
    text = format_run(run, tag="t")
    assert text.splitlines() == [
        "q1 Q0 d1 1 3.000000 t",
        "q1 Q0 d2 2 2.250000 t",
        "q2 Q0 d9 1 1.500000 t",
    ]
    assert all(len(line.split(" ")) == 6 for line in text.splitlines())
    assert parse_run(text.splitlines()) == {"q1": [("d1", 3.0), ("d2", 2.25)], "q2": [("d9", 1.5)]}


@given(st.dictionaries(st.from_regex(r"q[0-9]{1,3}", fullmatch=True),
                       st.lists(st.floats(-1e6, 1e6), max_size=8), max_size=5))
def test_roundtrip_property(scores):
    run = {q: [(f"d{i}", round(s, 6)) for i, s in enumerate(sorted(v, reverse=True))]
           for q, v in scores.items() if v}
    parsed = parse_run(format_run(run).splitlines())
    assert parsed.keys() == run.keys()
    for q in run:
        assert [d for d, _ in parsed[q]] == [d for d, _ in run[q]]


@pytest.mark.parametrize("line", [
    "q1 Q0 d1 1 2.0",
    "q1 X d1 1 2.0 t",
    "q1 Q0 d1 0 2.0 t",
    "q1 Q0 d1 one 2.0 t",
])
def test_invalid_lines(line):
    with pytest.raises(RunFormatError):
        parse_run([line])


def test_duplicates_rejected():
    with pytest.raises(RunFormatError, match="ranks"):
        parse_run(["q Q0 a 1 1 t", "q Q0 b 1 1 t"])
    with pytest.raises(RunFormatError, match="docids"):
        parse_run(["q Q0 a 1 1 t", "q Q0 a 2 1 t"])


def test_qrels_roundtrip():
    qrels = {"q1": {"a": 2, "b": 0}, "q2": {"c": 1}}
    assert parse_qrels(format_qrels(qrels).splitlines()) == qrels
    with pytest.raises(RunFormatError):
        parse_qrels(["q1 0 a"])
