"""Test-matrix notation: parsing, pairwise-compatibility semantics, and
flattening, duel-checked against a brute-force product filter."""

import itertools
import random

import pytest

from svmsim.testmatrix import MatrixError, expand_matrix, parse_graph
from svmsim.testmatrix import TestMatrixGraph as MatrixGraph

PLAIN = """
[axis platform]     # two boards
zc706
juno

[axis app]
matmul
pagerank
memcopy
"""

RESTRICTED = PLAIN + """
compat: zc706 matmul
compat: zc706 pagerank
compat: juno matmul
compat: juno memcopy
compat: zc706 memcopy
"""


def brute_force(g: MatrixGraph):
    """Reference expansion: full product, then the pairwise filter."""
    if not g.axes:
        return []
    rows = []
    for combo in itertools.product(*(g.choices[a] for a in g.axes)):
        ok = all(g.compatible(i, j, combo[i], combo[j])
                 for i in range(len(combo)) for j in range(i + 1, len(combo)))
        if ok:
            rows.append(combo)
    return rows


class TestParse:
    def test_axes_choices_and_edges(self):
        g = parse_graph(RESTRICTED)
        assert g.axes == ["platform", "app"]
        assert g.choices == {"platform": ["zc706", "juno"],
                             "app": ["matmul", "pagerank", "memcopy"]}
        assert g.edges == {(0, 1): {("zc706", "matmul"), ("zc706", "pagerank"),
                                    ("juno", "matmul"), ("juno", "memcopy"),
                                    ("zc706", "memcopy")}}

    def test_comments_and_blanks_are_ignored(self):
        g = parse_graph("# all comments\n\n[axis a]  # trailing\nx\n")
        assert g.choices == {"a": ["x"]}

    @pytest.mark.parametrize("doc,fragment", [
        ("[axis]\n", "bad section header"),
        ("[matrix a]\n", "bad section header"),
        ("[axis a]\nx\n[axis a]\ny\n", "duplicate axis"),
        ("stray\n", "outside any axis"),
        ("[axis a]\nx y\n", "one choice per line"),
        ("[axis a]\nx\n[axis b]\nx\n", "already declared"),
        ("[axis a]\nx\ncompat: x\n", "exactly two"),
        ("[axis a]\nx\ncompat: x ghost\n", "unknown choice"),
        ("[axis a]\nx\ny\ncompat: x y\n", "compat within axis"),
    ])
    def test_malformed_documents(self, doc, fragment):
        with pytest.raises(MatrixError, match=fragment):
            parse_graph(doc)

    def test_matrix_error_is_a_value_error(self):
        assert issubclass(MatrixError, ValueError)


class TestExpand:
    def test_unrestricted_axes_give_the_full_product(self):
        rows = expand_matrix(PLAIN)
        assert rows == [("zc706", "matmul"), ("zc706", "pagerank"),
                        ("zc706", "memcopy"), ("juno", "matmul"),
                        ("juno", "pagerank"), ("juno", "memcopy")]

    def test_compat_lines_replace_the_default(self):
        rows = expand_matrix(RESTRICTED)
        assert rows == [("zc706", "matmul"), ("zc706", "pagerank"),
                        ("zc706", "memcopy"), ("juno", "matmul"),
                        ("juno", "memcopy")]

    def test_single_compat_line_excludes_everything_else(self):
        # One edge on the pair makes that the ONLY allowed pairing, so the
        # second platform has no compatible app left: a dead end.
        doc = PLAIN + "compat: zc706 matmul\n"
        with pytest.raises(MatrixError) as err:
            expand_matrix(doc)
        assert "zero compatible choices" in str(err.value)
        assert "('juno',)" in str(err.value)

    def test_empty_document_expands_to_nothing(self):
        assert expand_matrix("") == []
        assert expand_matrix("# only a comment\n") == []

    def test_axis_without_choices_is_an_error(self):
        with pytest.raises(MatrixError, match="no choices"):
            expand_matrix("[axis a]\n")

    def test_three_axes_pairwise_filtering(self):
        doc = """
[axis p]
p1
p2
[axis m]
copy
svm
[axis b]
small
big
compat: p1 copy
compat: p1 svm
compat: p2 svm
compat: svm big
compat: copy small
compat: copy big
compat: p1 small
compat: p1 big
compat: p2 big
"""
        rows = expand_matrix(doc)
        assert rows == [("p1", "copy", "small"), ("p1", "copy", "big"),
                        ("p1", "svm", "big"), ("p2", "svm", "big")]

    def test_rows_follow_document_order(self):
        rows = expand_matrix("[axis a]\nz\ny\n[axis b]\nq\np\n")
        assert rows == [("z", "q"), ("z", "p"), ("y", "q"), ("y", "p")]


def random_graph(rng):
    n_axes = rng.randint(1, 5)
    axes = [f"ax{i}" for i in range(n_axes)]
    choices = {}
    tag = 0
    for a in axes:
        k = rng.randint(1, 4)
        choices[a] = [f"c{tag + j}" for j in range(k)]
        tag += k
    edges = {}
    for i in range(n_axes):
        for j in range(i + 1, n_axes):
            if rng.random() < 0.4:
                pairs = set()
                for a in choices[axes[i]]:
                    for b in choices[axes[j]]:
                        if rng.random() < 0.7:
                            pairs.add((a, b))
                edges[(i, j)] = pairs
    return MatrixGraph(axes, choices, edges)


class TestDuel:
    def test_expansion_matches_brute_force(self):
        rng = random.Random(2024)
        checked = dead_ends = 0
        for _ in range(100):
            g = random_graph(rng)
            try:
                rows = expand_matrix(g)
            except MatrixError:
                # The DFS reports dead ends the brute force silently skips;
                # a dead end can only happen when some full completion is
                # impossible, i.e. the brute-force count shrinks too.
                dead_ends += 1
                assert len(brute_force(g)) < len(
                    list(itertools.product(*(g.choices[a] for a in g.axes))))
                continue
            checked += 1
            assert rows == brute_force(g)
            assert len(set(rows)) == len(rows)
        assert checked >= 20 and dead_ends >= 1
