"""Closed-form scalar expressions in t, x (and optionally u), evaluated with numpy.

Strings are parsed with :mod:`ast` and only a small whitelist of node types,
names and functions is accepted, so scenario files cannot run arbitrary code.
"""
from __future__ import annotations

import ast

import numpy as np


class ExpressionError(ValueError):
    pass


FUNCTIONS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "atan": np.arctan,
    "atan2": np.arctan2, "sinh": np.sinh, "cosh": np.cosh,
    "min": np.minimum, "max": np.maximum,
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Subscript, ast.Index if hasattr(ast, "Index") else ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


class _Columns:
    def __init__(self, X, name):
        self._X = X
        self._name = name

    def __getitem__(self, i):
        if not isinstance(i, (int, np.integer)) or not 0 <= i < self._X.shape[1]:
            raise ExpressionError(f"index {i!r} out of range for {self._name}")
        return self._X[:, i]


class Expression:
    """A compiled scalar expression; call with t of shape (P,), x of shape (P, n)."""

    def __init__(self, source: str | float | int, dim: int, control_dim: int = 0):
        if isinstance(source, (int, float)):
            source = repr(float(source))
        self.source = str(source)
        self.dim = dim
        self.control_dim = control_dim
        try:
            tree = ast.parse(self.source, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.source!r}: {exc.msg}") from None
        names = set(self._variables()) | set(FUNCTIONS) | set(CONSTANTS)
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ExpressionError(f"{type(node).__name__} is not allowed in {self.source!r}")
            if isinstance(node, ast.Name) and node.id not in names:
                raise ExpressionError(f"unknown name {node.id!r} in {self.source!r}")
            if isinstance(node, ast.Call):
                if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS or node.keywords:
                    raise ExpressionError(f"unsupported call in {self.source!r}")
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise ExpressionError(f"non-numeric constant in {self.source!r}")
        self._code = compile(tree, "<expression>", "eval")
        self.depends_on_x = any(
            isinstance(node, ast.Name) and (node.id == "x" or node.id.startswith("x"))
            for node in ast.walk(tree))
        self.depends_on_t = any(isinstance(node, ast.Name) and node.id == "t" for node in ast.walk(tree))

    def _variables(self):
        yield "t"
        yield "x"
        for i in range(self.dim):
            yield f"x{i}"
        if self.control_dim:
            yield "u"
            for i in range(self.control_dim):
                yield f"u{i}"

    def __call__(self, t, x, u=None) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        env = dict(CONSTANTS)
        env.update(FUNCTIONS)
        env["t"] = t
        env["x"] = _Columns(x, "x")
        for i in range(self.dim):
            env[f"x{i}"] = x[:, i]
        if self.control_dim:
            u = np.asarray(u, dtype=float).reshape(-1, self.control_dim)
            u = np.broadcast_to(u, (t.size, self.control_dim))
            env["u"] = _Columns(u, "u")
            for i in range(self.control_dim):
                env[f"u{i}"] = u[:, i]
        with np.errstate(all="ignore"):
            out = eval(self._code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), t.shape).copy()

    def __repr__(self):
        return f"Expression({self.source!r})"


class ExpressionVector:
    """R^n-valued map (t, x) -> (e_1, ..., e_n), vectorized over rows."""

    def __init__(self, sources, dim: int, control=None, control_dim: int = 0):
        if isinstance(sources, (str, int, float)):
            sources = [sources]
        sources = list(sources)
        if len(sources) != dim:
            raise ExpressionError(f"expected {dim} components, got {len(sources)}")
        self.dim = dim
        self.components = [Expression(s, dim, control_dim) for s in sources]
        self.control = None if control is None else np.asarray(control, dtype=float)

    @property
    def sources(self) -> list[str]:
        return [c.source for c in self.components]

    def __call__(self, t, x) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.asarray(x, dtype=float).reshape(t.size, self.dim)
        return np.stack([c(t, x, self.control) for c in self.components], axis=1)

    def with_control(self, u) -> "ExpressionVector":
        bound = object.__new__(ExpressionVector)
        bound.dim = self.dim
        bound.components = self.components
        bound.control = np.asarray(u, dtype=float)
        return bound
