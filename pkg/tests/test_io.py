import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonprob import io as nio
from nonprob.errors import FrameError, ParseError
from nonprob.popgen import Design, DgpSpec, draw_b_sample, draw_s_sample, generate_population


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6), z=st.sampled_from(["none", "uniform", "stratum_grid"]))
def test_round_trip(tmp_path_factory, seed, z):
    d = tmp_path_factory.mktemp("rt")
    spec = DgpSpec(N=300, proportions=(0.3, 0.7), mu=(0.1, 1.7), p=(0.2, 0.35), p_het=0.3, z=z)
    pop = generate_population(spec, seed)
    b = draw_b_sample(pop, seed + 1)
    s = draw_s_sample(pop, Design("stratified", fractions={0: 0.2, 1: 0.1}, observe_y=True), exclude=b, seed=seed + 2)

    nio.write_population(pop, d / "pop.csv")
    pop2 = nio.read_population(d / "pop.csv")
    for f in ("y", "x", "p_true", "z", "mu"):
        a, c = getattr(pop, f), getattr(pop2, f)
        assert (a is None and c is None) or np.array_equal(a, c)

    nio.write_b_sample(b, d / "b.csv")
    b2 = nio.read_b_sample(d / "b.csv")
    for f in ("members", "y", "x", "z"):
        a, c = getattr(b, f), getattr(b2, f)
        assert (a is None and c is None) or np.array_equal(a, c)

    nio.write_s_sample(s, d / "s.csv")
    s2 = nio.read_s_sample(d / "s.csv", b=b2)
    for f in ("members", "pi", "d", "y", "x", "z", "strata"):
        a, c = getattr(s, f), getattr(s2, f)
        assert (a is None and c is None) or np.array_equal(a, c)


def test_margins_round_trip(tmp_path):
    nio.write_margins(tmp_path / "m.csv", sizes={0: 10, 1: 20}, zbar={0: 0.25, 1: 1 / 3})
    m = nio.read_margins(tmp_path / "m.csv")
    assert m.sizes == {0: 10, 1: 20} and m.N == 30 and m.zbar[1] == 1 / 3
    nio.write_margins(tmp_path / "t.csv", names=["1", "x"], totals=[30.0, 20.0])
    t = nio.read_margins(tmp_path / "t.csv")
    assert t.names == ["1", "x"] and list(t.totals) == [30.0, 20.0]


def test_three_row_b(tmp_path):
    b = nio.read_b_sample(write(tmp_path / "b.csv", "unit_id,y,x\n1,2,0\n2,4,1\n3,3,1\n"))
    assert b.n == 3 and list(b.y) == [2, 4, 3]


def test_string_labels(tmp_path):
    b = nio.read_b_sample(write(tmp_path / "b.csv", "unit_id,y,x\n1,2,north\n2,4,south\n"))
    assert list(b.x) == ["north", "south"]


@pytest.mark.parametrize("text,line,column", [
    ("unit_id,y\n1,2\n", 1, None),
    ("unit_id,y,x\n1,2,0\n1,3,0\n", 3, "unit_id"),
    ("unit_id,y,x\n1,abc,0\n", 2, "y"),
    ("unit_id,y,x\n1,2,0\n2,nan,0\n", 3, "y"),
    ("unit_id,y,x\n1,2\n", 2, None),
    ("unit_id,y,x\n-1,2,0\n", 2, "unit_id"),
    ("unit_id,y,x,w\n1,2,0,1\n", 1, None),
    ("", 1, None),
])
def test_b_parse_errors(tmp_path, text, line, column):
    with pytest.raises(ParseError) as info:
        nio.read_b_sample(write(tmp_path / "b.csv", text))
    assert info.value.line == line and info.value.column == column
    assert f":{line}" in str(info.value)


def test_zero_pi_names_row(tmp_path):
    with pytest.raises(ParseError) as info:
        nio.read_s_sample(write(tmp_path / "s.csv", "unit_id,pi,x\n5,0.1,0\n6,0,0\n"))
    assert info.value.line == 3 and info.value.column == "pi"


def test_overlap_rejected(tmp_path):
    b = nio.read_b_sample(write(tmp_path / "b.csv", "unit_id,y,x\n1,2,0\n2,4,1\n"))
    s_path = write(tmp_path / "s.csv", "unit_id,pi,x\n5,0.1,0\n2,0.1,1\n")
    with pytest.raises(FrameError) as info:
        nio.read_s_sample(s_path, b=b)
    assert "s.csv:3" in str(info.value)
    assert nio.read_s_sample(s_path).n == 2


def test_duplicate_margin_label(tmp_path):
    with pytest.raises(ParseError) as info:
        nio.read_margins(write(tmp_path / "m.csv", "x,N_x\n0,10\n1,5\n0,3\n"))
    assert info.value.line == 4


def test_fractional_margin(tmp_path):
    with pytest.raises(ParseError):
        nio.read_margins(write(tmp_path / "m.csv", "x,N_x\n0,10.5\n"))


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        nio.read_b_sample(tmp_path / "nope.csv")
