"""Graph-based test-matrix notation and its flattening.

A matrix document declares axes (platform, application, build parameter, ...)
with their choices, plus optional compatibility edges between choices on
different axes:

    [axis platform]
    zc706
    juno

    [axis app]
    matmul
    pagerank

    compat: zc706 matmul

Flattening yields every axis-complete tuple of pairwise-compatible choices.
For an axis pair with no ``compat:`` line at all, every pairing is allowed;
once any edge mentions the pair, only the listed pairings are.
"""

from __future__ import annotations


class MatrixError(ValueError):
    """Malformed matrix document or an unsatisfiable axis."""


class TestMatrixGraph:
    """Axes in document order, choices per axis, and explicit compat edges."""

    def __init__(self, axes, choices, edges):
        self.axes = axes            # [axis name, ...]
        self.choices = choices      # {axis: [choice, ...]}
        self.edges = edges          # {(axis_i, axis_j): {(a, b), ...}}, i < j

    def compatible(self, ai: int, aj: int, a: str, b: str) -> bool:
        """True if choice `a` on axis index ai may pair with `b` on aj."""
        if ai > aj:
            ai, aj, a, b = aj, ai, b, a
        allowed = self.edges.get((ai, aj))
        return allowed is None or (a, b) in allowed


def parse_graph(text: str) -> TestMatrixGraph:
    axes: list[str] = []
    choices: dict[str, list[str]] = {}
    owner: dict[str, str] = {}      # choice -> axis
    compat_lines: list[tuple[int, str]] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            head = line[1:-1].split()
            if len(head) != 2 or head[0] != "axis" or not head[1]:
                raise MatrixError(f"line {lineno}: bad section header {raw!r}")
            name = head[1]
            if name in choices:
                raise MatrixError(f"line {lineno}: duplicate axis {name!r}")
            axes.append(name)
            choices[name] = []
            current = name
            continue
        if line.startswith("compat:"):
            compat_lines.append((lineno, line[len("compat:"):]))
            continue
        if current is None:
            raise MatrixError(f"line {lineno}: choice {line!r} outside any axis")
        if len(line.split()) != 1:
            raise MatrixError(f"line {lineno}: one choice per line, got {raw!r}")
        if line in owner:
            raise MatrixError(f"line {lineno}: choice {line!r} already "
                              f"declared on axis {owner[line]!r}")
        owner[line] = current
        choices[current].append(line)

    index = {name: i for i, name in enumerate(axes)}
    edges: dict[tuple[int, int], set] = {}
    for lineno, rest in compat_lines:
        names = rest.split()
        if len(names) != 2:
            raise MatrixError(f"line {lineno}: compat takes exactly two "
                              f"choices, got {names}")
        a, b = names
        for c in (a, b):
            if c not in owner:
                raise MatrixError(f"line {lineno}: unknown choice {c!r}")
        ai, aj = index[owner[a]], index[owner[b]]
        if ai == aj:
            raise MatrixError(f"line {lineno}: compat within axis "
                              f"{owner[a]!r} ({a!r}, {b!r})")
        if ai > aj:
            ai, aj, a, b = aj, ai, b, a
        edges.setdefault((ai, aj), set()).add((a, b))
    return TestMatrixGraph(axes, choices, edges)


def expand_matrix(document) -> list[tuple[str, ...]]:
    """Flatten a matrix document (text or parsed graph) into the ordered,
    duplicate-free list of axis-complete compatible combinations."""
    g = document if isinstance(document, TestMatrixGraph) else \
        parse_graph(document)
    if not g.axes:
        return []
    for axis in g.axes:
        if not g.choices[axis]:
            raise MatrixError(f"axis {axis!r} has no choices")

    out: list[tuple[str, ...]] = []

    def extend(path: tuple[str, ...]) -> None:
        ai = len(path)
        if ai == len(g.axes):
            out.append(path)
            return
        options = [c for c in g.choices[g.axes[ai]]
                   if all(g.compatible(j, ai, path[j], c)
                          for j in range(ai))]
        if not options:
            raise MatrixError(
                f"axis {g.axes[ai]!r} has zero compatible choices for "
                f"partial combination {path}")
        for c in options:
            extend(path + (c,))

    extend(())
    return out
