"""Minimal arithmetic grammar for custom log-density expressions.

Supported over coordinates x1..xd: +, -, *, /, ** (power), unary minus,
exp(...), and numeric literals.  Anything else is rejected at parse time.
"""

from __future__ import annotations

import ast

import numpy as np

from .errors import ConfigError

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_UNARYOPS = {ast.USub: np.negative, ast.UAdd: np.positive}


def _validate(node: ast.AST, d: int) -> None:
    if isinstance(node, ast.Expression):
        _validate(node.body, d)
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINOPS:
            raise ConfigError(f"operator {type(node.op).__name__} not in the grammar")
        _validate(node.left, d)
        _validate(node.right, d)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNARYOPS:
            raise ConfigError(f"operator {type(node.op).__name__} not in the grammar")
        _validate(node.operand, d)
    elif isinstance(node, ast.Call):
        if not (isinstance(node.func, ast.Name) and node.func.id == "exp"
                and len(node.args) == 1 and not node.keywords):
            raise ConfigError("only exp(...) calls are allowed")
        _validate(node.args[0], d)
    elif isinstance(node, ast.Name):
        if not (node.id.startswith("x") and node.id[1:].isdigit()
                and 1 <= int(node.id[1:]) <= d):
            raise ConfigError(f"unknown name {node.id!r}; coordinates are x1..x{d}")
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ConfigError(f"literal {node.value!r} is not numeric")
    else:
        raise ConfigError(f"syntax {type(node).__name__} not in the grammar")


def _evaluate(node: ast.AST, x: np.ndarray):
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, x)
    if isinstance(node, ast.BinOp):
        return _BINOPS[type(node.op)](_evaluate(node.left, x), _evaluate(node.right, x))
    if isinstance(node, ast.UnaryOp):
        return _UNARYOPS[type(node.op)](_evaluate(node.operand, x))
    if isinstance(node, ast.Call):
        return np.exp(_evaluate(node.args[0], x))
    if isinstance(node, ast.Name):
        return x[..., int(node.id[1:]) - 1]
    if isinstance(node, ast.Constant):
        return float(node.value)
    raise ConfigError(f"unexpected node {type(node).__name__}")  # unreachable after validation


def compile_log_density(expr: str, d: int):
    """Compile an expression string into a vectorized log-density callable."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse density expression {expr!r}: {exc}") from exc
    _validate(tree, d)

    def log_density(x):
        x = np.asarray(x, dtype=float)
        out = _evaluate(tree, x)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1]).copy()

    return log_density
