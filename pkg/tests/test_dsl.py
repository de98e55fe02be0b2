import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgroups import manifold as mf
from rgroups.dsl import (BinOp, Call, Const, Neg, Num, Pow, Var, eval_jet2, eval_jets, evaluate_plain,
                         format_expr, load_metric, parse_metric)
from rgroups.errors import DomainError, MetricParseError

from conftest import DATA, random_points

HALFPLANE_TEXT = "dim 2; coords x y; domain x (-inf,inf) y (0,inf); g[0][0] = 1/(y*y); g[1][0] = 0; g[1][1] = 1/(y*y);"
SPHERE_TEXT = "dim 2; coords t p; domain t (0.05, 3.09) p (-3, 3); g[0][0] = 1; g[1][0] = 0; g[1][1] = sin(t)^2;"


def test_halfplane_text_matches_builtin(halfplane):
    M = mf.from_spec(parse_metric(HALFPLANE_TEXT))
    x = random_points(halfplane, 100, 5)
    for a, b in zip(mf.batch_metric(M, x), mf.batch_metric(halfplane, x)):
        assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))) < 1e-12


def test_data_files_match_builtins(sphere, halfplane):
    for name, B in (("sphere", sphere), ("halfplane", halfplane)):
        M = mf.resolve(str(DATA / f"{name}.metric"))
        assert np.array_equal(M.lower, B.lower) and np.array_equal(M.upper, B.upper)
        x = random_points(B, 100, 6)
        for a, b in zip(mf.batch_metric(M, x), mf.batch_metric(B, x)):
            assert np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))) < 1e-12


def test_one_dimensional():
    spec = parse_metric("dim 1; coords u; domain u (-inf,inf); g[0][0] = 1;")
    assert spec.dim == 1 and spec.domain == ((-math.inf, math.inf),)
    g, dg, d2g = eval_jet2(spec, [0.3])
    assert g.tolist() == [[1.0]] and not dg.any() and not d2g.any()


def test_missing_entries_named():
    with pytest.raises(MetricParseError, match=r"g\[1\]\[0\], g\[1\]\[1\]"):
        parse_metric("dim 2; coords a b; g[0][0] = 1;")


@pytest.mark.parametrize("text, pattern", [
    ("dim 2; coords a; g[0][0] = 1;", "dimension mismatch"),
    ("dim 1; coords a; g[0][0] = b;", "unknown identifier"),
    ("dim 1; coords a; g[0][0] = (a + 1;", "expected"),
    ("dim 1; coords a; g[0][0] = a^1.5;", "integer"),
    ("dim 1; coords a; g[0][0] = tan(a);", "unknown function"),
    ("dim 2; coords a b; g[0][1] = 1;", "upper triangle"),
    ("dim 1; coords a; g[0][0] = 1", "';'"),
])
def test_parse_errors(text, pattern):
    with pytest.raises(MetricParseError, match=pattern) as info:
        parse_metric(text)
    assert info.value.line >= 1 and info.value.col >= 1


def test_error_position():
    with pytest.raises(MetricParseError) as info:
        parse_metric("dim 1;\ncoords a;\ng[0][0] = a +* 2;")
    assert info.value.line == 3


def test_halfplane_jet_example():
    g, dg, d2g = eval_jet2(parse_metric(HALFPLANE_TEXT), [0.0, 2.0])
    assert g[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert dg[0, 0, 1] == pytest.approx(-0.25, abs=1e-15)
    assert d2g[0, 0, 1, 1] == pytest.approx(0.375, abs=1e-15)


def test_constant_metric_has_no_derivatives():
    g, dg, d2g = eval_jet2(parse_metric("dim 2; coords a b; g[0][0] = 2; g[1][0] = 0.5; g[1][1] = 3;"), [1.0, -4.0])
    assert np.array_equal(g, [[2.0, 0.5], [0.5, 3.0]]) and not dg.any() and not d2g.any()


def test_sphere_jet_example():
    g, dg, d2g = eval_jet2(parse_metric(SPHERE_TEXT), [np.pi / 4, 0.0])
    assert g[1, 1] == pytest.approx(0.5, abs=1e-15)
    assert dg[1, 1, 0] == pytest.approx(1.0, abs=1e-15)
    assert d2g[1, 1, 0, 0] == pytest.approx(0.0, abs=1e-15)


def test_domain_violation():
    spec = parse_metric("dim 1; coords a; g[0][0] = 1 + ln(a)^2;")
    with pytest.raises(DomainError):
        eval_jet2(spec, [-1.0])


def test_comments_and_constants():
    spec = parse_metric("# comment\ndim 1; coords a;  # trailing\n domain a (-pi, 2*pi); g[0][0] = e + a^2;")
    assert spec.domain == ((-math.pi, 2 * math.pi),)
    assert eval_jet2(spec, [1.0])[0][0, 0] == pytest.approx(math.e + 1.0)


def test_warped_file_roundtrip():
    spec = load_metric(DATA / "warped3.metric")
    again = parse_metric(spec.to_text())
    assert again == spec or (again.entries == spec.entries and again.domain == spec.domain)


# -------------------------------------------------------------------- random expressions

_leaves = st.one_of(
    st.floats(0.1, 5.0).map(lambda v: Num(round(v, 3))),
    st.sampled_from([Var("a"), Var("b"), Const("pi")]),
)


def _extend(children):
    return st.one_of(
        st.tuples(st.sampled_from("+-*"), children, children).map(lambda t: BinOp(*t)),
        st.tuples(children, st.integers(1, 3)).map(lambda t: Pow(*t)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "sinh", "cosh"]), children).map(lambda t: Call(*t)),
        children.map(Neg),
    )


exprs = st.recursive(_leaves, _extend, max_leaves=8)


@settings(max_examples=150, deadline=None)
@given(exprs)
def test_print_parse_roundtrip(node):
    spec = parse_metric(f"dim 2; coords a b; g[0][0] = {format_expr(node)}; g[1][0] = 0; g[1][1] = 1;")
    assert spec.entries[(0, 0)] == node


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=60, deadline=None)
@given(exprs, st.floats(-0.8, 0.8), st.floats(-0.8, 0.8))
def test_jets_match_differences(node, a, b):
    spec = parse_metric(f"dim 2; coords a b; g[0][0] = 1; g[1][0] = 0; g[1][1] = {format_expr(node)};")
    x = np.array([a, b])
    g, dg, d2g = eval_jets(spec, x[None])
    if not np.isfinite(g).all() or np.abs(g).max() > 1e3:
        return
    h = 1e-5
    f = lambda y: evaluate_plain(node, {"a": y[0], "b": y[1]})
    E = np.eye(2) * h
    grad = np.array([(f(x + E[k]) - f(x - E[k])) / (2 * h) for k in range(2)])
    assert np.allclose(dg[0, 1, 1], grad, atol=1e-6 * max(1.0, np.abs(g).max()))
    hp = 1e-3
    E = np.eye(2) * hp
    hess = np.array([[(f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * hp * hp)
                      for j in range(2)] for i in range(2)])
    assert np.allclose(d2g[0, 1, 1], d2g[0, 1, 1].swapaxes(0, 1))
    assert np.allclose(d2g[0, 1, 1], hess, atol=1e-5 * max(1.0, np.abs(g).max()))
