"""Weight kernels K(x) given as text expressions.

Expressions are parsed into a small immutable tree and evaluated with
second-order forward-mode jets (value, gradient, Hessian), vectorized over a
batch of points. The grammar is fixed::

    expr    := term (('+'|'-') term)*
    term    := unary (('*'|'/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := number | 'pi' | var | func '(' expr ')' | 'norm(x)' | '(' expr ')'
    var     := 'x' digits                     # 1-based, x1..xn

so ``^`` binds tighter than unary minus (``-x1^2 == -(x1^2)``), which binds
tighter than ``*`` and ``/``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import KernelDomainError, KernelPositivityError, KernelSyntaxError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float
    name: Optional[str] = None  # "pi" keeps its symbolic spelling when printed


@dataclass(frozen=True)
class Var:
    index: int  # 0-based


@dataclass(frozen=True)
class Norm:
    pass


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


Node = Union[Num, Var, Norm, Unary, Binary]


def is_constant(node: Node) -> bool:
    if isinstance(node, Num):
        return True
    if isinstance(node, (Var, Norm)):
        return False
    if isinstance(node, Unary):
        return is_constant(node.arg)
    return is_constant(node.left) and is_constant(node.right)


def max_var_index(node: Node) -> int:
    """Largest 1-based variable index used in ``node`` (0 if none)."""
    if isinstance(node, Var):
        return node.index + 1
    if isinstance(node, Unary):
        return max_var_index(node.arg)
    if isinstance(node, Binary):
        return max(max_var_index(node.left), max_var_index(node.right))
    return 0


def to_text(node: Node) -> str:
    """Fully parenthesized text that parses back to an identical tree."""
    if isinstance(node, Num):
        if node.name:
            return node.name
        text = repr(float(node.value))
        return f"({text})" if node.value < 0 else text
    if isinstance(node, Var):
        return f"x{node.index + 1}"
    if isinstance(node, Norm):
        return "norm(x)"
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    return f"({to_text(node.left)}{node.op}{to_text(node.right)})"


# ---------------------------------------------------------------------------
# Tokenizer and Pratt parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)

_INFIX_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 40}
_PREFIX_NEG_BP = 30


@dataclass(frozen=True)
class _Tok:
    kind: str  # num | name | op | end
    text: str
    pos: int


def _tokenize(src: str) -> list:
    toks = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise KernelSyntaxError(f"unexpected character {src[bad]!r}", bad, src)
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(src)))
    return toks


class _Parser:
    def __init__(self, src: str, dim: int):
        self.src = src
        self.dim = dim
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.tok
        raise KernelSyntaxError(msg, tok.pos, self.src)

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text or self.tok.kind not in ("op",):
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {text!r}, found {what}")
        return self.advance()

    def parse(self) -> Node:
        if self.tok.kind == "end":
            self.error("empty expression")
        node = self.expression(0)
        if self.tok.kind != "end":
            self.error(f"unexpected token {self.tok.text!r}")
        return node

    def expression(self, rbp: int) -> Node:
        left = self.prefix()
        while True:
            t = self.tok
            bp = _INFIX_BP.get(t.text) if t.kind == "op" else None
            if bp is None or bp <= rbp:
                return left
            self.advance()
            if t.text == "^":
                # right associative, exponent may carry its own unary minus
                right = self.expression(_PREFIX_NEG_BP - 1)
            else:
                right = self.expression(bp)
            left = Binary(t.text, left, right)

    def prefix(self) -> Node:
        t = self.advance()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "op" and t.text == "-":
            return Unary("neg", self.expression(_PREFIX_NEG_BP))
        if t.kind == "op" and t.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if t.kind == "name":
            return self.name(t)
        if t.kind == "end":
            self.error("unexpected end of input", t)
        self.error(f"unexpected token {t.text!r}", t)

    def name(self, t: _Tok) -> Node:
        name = t.text
        if name == "pi":
            return Num(math.pi, "pi")
        m = re.fullmatch(r"x(\d+)", name)
        if m:
            idx = int(m.group(1))
            if idx < 1 or idx > self.dim:
                self.error(f"variable {name} out of range for dimension {self.dim}", t)
            return Var(idx - 1)
        if name == "norm":
            self.expect("(")
            arg = self.tok
            if arg.kind != "name" or arg.text != "x":
                self.error("norm() takes the state vector 'x' as its only argument")
            self.advance()
            self.expect(")")
            return Norm()
        if name in FUNCTIONS:
            self.expect("(")
            arg = self.expression(0)
            self.expect(")")
            return Unary(name, arg)
        self.error(f"unknown identifier {name!r}", t)


# ---------------------------------------------------------------------------
# Second-order forward-mode jets
# ---------------------------------------------------------------------------

class Jet:
    """Value, gradient and Hessian of a scalar field at a batch of points.

    Shapes are ``(m,)``, ``(m, n)`` and ``(m, n, n)``; ``grad``/``hess`` are
    ``None`` when a lower order was requested.
    """

    __slots__ = ("val", "grad", "hess")

    def __init__(self, val, grad=None, hess=None):
        self.val = val
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, c: float, m: int, n: int, order: int) -> "Jet":
        val = np.full(m, c)
        grad = np.zeros((m, n)) if order >= 1 else None
        hess = np.zeros((m, n, n)) if order >= 2 else None
        return cls(val, grad, hess)

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(
            self.val + other.val,
            None if self.grad is None else self.grad + other.grad,
            None if self.hess is None else self.hess + other.hess,
        )

    def __sub__(self, other: "Jet") -> "Jet":
        return Jet(
            self.val - other.val,
            None if self.grad is None else self.grad - other.grad,
            None if self.hess is None else self.hess - other.hess,
        )

    def __neg__(self) -> "Jet":
        return Jet(
            -self.val,
            None if self.grad is None else -self.grad,
            None if self.hess is None else -self.hess,
        )

    def __mul__(self, other: "Jet") -> "Jet":
        a, b = self.val, other.val
        grad = hess = None
        if self.grad is not None:
            grad = a[:, None] * other.grad + b[:, None] * self.grad
        if self.hess is not None:
            cross = self.grad[:, :, None] * other.grad[:, None, :]
            hess = (a[:, None, None] * other.hess + b[:, None, None] * self.hess
                    + cross + np.swapaxes(cross, 1, 2))
        return Jet(a * b, grad, hess)

    def chain(self, f0, f1, f2) -> "Jet":
        """Compose with a scalar function given its value and derivatives."""
        grad = hess = None
        if self.grad is not None:
            grad = f1[:, None] * self.grad
        if self.hess is not None:
            hess = (f2[:, None, None] * self.grad[:, :, None] * self.grad[:, None, :]
                    + f1[:, None, None] * self.hess)
        return Jet(f0, grad, hess)

    def scale(self, c: float) -> "Jet":
        return Jet(
            c * self.val,
            None if self.grad is None else c * self.grad,
            None if self.hess is None else c * self.hess,
        )


class _EvalContext:
    def __init__(self, X: np.ndarray, order: int):
        self.X = X
        self.m, self.n = X.shape
        self.order = order
        self.nonsmooth = False


def _const_value(node: Node) -> float:
    ctx = _EvalContext(np.zeros((1, 1)), 0)
    return float(_eval(node, ctx).val[0])


def _reciprocal(u: Jet) -> Jet:
    if np.any(u.val == 0.0):
        raise KernelDomainError("division by zero")
    inv = 1.0 / u.val
    return u.chain(inv, -inv * inv, 2.0 * inv * inv * inv)


def _int_power(u: Jet, p: int, ctx: _EvalContext) -> Jet:
    if p == 0:
        return Jet.constant(1.0, ctx.m, ctx.n, ctx.order)
    if p < 0:
        return _reciprocal(_int_power(u, -p, ctx))
    result = None
    base = u
    while p:
        if p & 1:
            result = base if result is None else result * base
        p >>= 1
        if p:
            base = base * base
    return result


def _eval(node: Node, ctx: _EvalContext) -> Jet:
    if isinstance(node, Num):
        return Jet.constant(node.value, ctx.m, ctx.n, ctx.order)
    if isinstance(node, Var):
        val = ctx.X[:, node.index].copy()
        grad = hess = None
        if ctx.order >= 1:
            grad = np.zeros((ctx.m, ctx.n))
            grad[:, node.index] = 1.0
        if ctx.order >= 2:
            hess = np.zeros((ctx.m, ctx.n, ctx.n))
        return Jet(val, grad, hess)
    if isinstance(node, Norm):
        return _eval_norm(ctx)
    if isinstance(node, Unary):
        return _eval_unary(node.op, _eval(node.arg, ctx), ctx)
    return _eval_binary(node, ctx)


def _eval_norm(ctx: _EvalContext) -> Jet:
    X = ctx.X
    r = np.sqrt(np.einsum("ij,ij->i", X, X))
    grad = hess = None
    zero = r == 0.0
    if zero.any() and ctx.order >= 1:
        ctx.nonsmooth = True
    safe = np.where(zero, 1.0, r)
    if ctx.order >= 1:
        grad = np.where(zero[:, None], 0.0, X / safe[:, None])
    if ctx.order >= 2:
        eye = np.eye(ctx.n)[None, :, :]
        hess = (eye - grad[:, :, None] * grad[:, None, :]) / safe[:, None, None]
        hess[zero] = 0.0
    return Jet(r, grad, hess)


def _eval_unary(op: str, u: Jet, ctx: _EvalContext) -> Jet:
    x = u.val
    if op == "neg":
        return -u
    if op == "sin":
        s, c = np.sin(x), np.cos(x)
        return u.chain(s, c, -s)
    if op == "cos":
        s, c = np.sin(x), np.cos(x)
        return u.chain(c, -s, -c)
    if op == "exp":
        e = np.exp(x)
        return u.chain(e, e, e)
    if op == "log":
        if np.any(x <= 0.0):
            raise KernelDomainError("log of a non-positive number")
        inv = 1.0 / x
        return u.chain(np.log(x), inv, -inv * inv)
    if op == "sqrt":
        if np.any(x < 0.0):
            raise KernelDomainError("sqrt of a negative number")
        r = np.sqrt(x)
        if ctx.order >= 1 and np.any(r == 0.0):
            raise KernelDomainError("sqrt is not differentiable at 0")
        with np.errstate(divide="ignore"):
            d1 = 0.5 / r
        return u.chain(r, d1, -0.5 * d1 / np.where(x == 0.0, 1.0, x))
    if op == "abs":
        sgn = np.sign(x)
        if ctx.order >= 1 and np.any(x == 0.0):
            ctx.nonsmooth = True
        return u.chain(np.abs(x), sgn, np.zeros_like(x))
    raise KernelDomainError(f"unknown function {op!r}")


def _eval_binary(node: Binary, ctx: _EvalContext) -> Jet:
    op = node.op
    if op == "^":
        return _eval_power(node, ctx)
    left = _eval(node.left, ctx)
    right = _eval(node.right, ctx)
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        return left * _reciprocal(right)
    raise KernelDomainError(f"unknown operator {op!r}")


def _eval_power(node: Binary, ctx: _EvalContext) -> Jet:
    base = _eval(node.left, ctx)
    if is_constant(node.right):
        p = _const_value(node.right)
        if float(p).is_integer():
            return _int_power(base, int(p), ctx)
        x = base.val
        if np.any(x <= 0.0):
            raise KernelDomainError("non-integer power of a non-positive base")
        f0 = x ** p
        f1 = p * x ** (p - 1.0)
        f2 = p * (p - 1.0) * x ** (p - 2.0)
        return base.chain(f0, f1, f2)
    if np.any(base.val <= 0.0):
        raise KernelDomainError("variable exponent requires a positive base")
    logb = _eval_unary("log", base, ctx)
    expo = _eval(node.right, ctx)
    return _eval_unary("exp", expo * logb, ctx)


# ---------------------------------------------------------------------------
# Public kernel objects
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelEval:
    """Batch evaluation result; ``nonsmooth`` flags a kink (norm at 0, abs at 0)."""

    value: np.ndarray
    grad: Optional[np.ndarray]
    hess: Optional[np.ndarray]
    nonsmooth: bool = False


@dataclass(frozen=True)
class KernelExpr:
    dim: int
    root: Node
    source: str

    def __str__(self) -> str:
        return to_text(self.root)

    def jet(self, X, order: int = 2) -> KernelEval:
        """Evaluate K and up to ``order`` derivatives at the rows of ``X``.

        No positivity check is done here; see :meth:`values` and
        :func:`eval_kernel` for the checked entry points.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"points have dimension {X.shape[1]}, kernel expects {self.dim}")
        ctx = _EvalContext(X, order)
        with np.errstate(over="ignore", invalid="ignore"):
            jet = _eval(self.root, ctx)
        hess = jet.hess
        if hess is not None:
            hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return KernelEval(jet.val, jet.grad, hess, ctx.nonsmooth)

    def values(self, X) -> np.ndarray:
        """Positivity-checked kernel values at the rows of ``X``."""
        val = self.jet(X, order=0).value
        check_positive(val)
        return val


@dataclass(frozen=True)
class HomotopyKernel:
    """Blend ``(1 - alpha) + alpha * K(x)`` joining the uniform kernel to ``base``."""

    base: KernelExpr
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def dim(self) -> int:
        return self.base.dim

    def jet(self, X, order: int = 2) -> KernelEval:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m, n = X.shape
        a = self.alpha
        if a == 0.0:
            return KernelEval(
                np.ones(m),
                np.zeros((m, n)) if order >= 1 else None,
                np.zeros((m, n, n)) if order >= 2 else None,
            )
        k = self.base.jet(X, order)
        if a == 1.0:
            return k
        return KernelEval(
            (1.0 - a) + a * k.value,
            None if k.grad is None else a * k.grad,
            None if k.hess is None else a * k.hess,
            k.nonsmooth,
        )

    def values(self, X) -> np.ndarray:
        val = self.jet(X, order=0).value
        check_positive(val)
        return val


def check_positive(values) -> None:
    values = np.asarray(values)
    bad = ~np.isfinite(values) | (values <= 0.0)
    if np.any(bad):
        worst = values[bad].flat[0]
        raise KernelPositivityError(f"kernel must be finite and positive, got {worst!r}")


def parse_kernel(src: str, dim: int) -> KernelExpr:
    """Parse ``src`` into a kernel on R^dim.

    >>> eval_kernel(parse_kernel("1/(0.5+norm(x))", 2), [0.0, 0.0])
    2.0
    """
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    if not isinstance(src, str) or not src.strip():
        raise KernelSyntaxError("empty expression", 0, src if isinstance(src, str) else "")
    root = _Parser(src, int(dim)).parse()
    return KernelExpr(int(dim), root, src)


def print_kernel(k: KernelExpr) -> str:
    return to_text(k.root)


def _point(k, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (k.dim,):
        raise ValueError(f"expected a point of length {k.dim}, got shape {x.shape}")
    return x[None, :]


def eval_kernel(k, x) -> float:
    """K(x) at a single point; raises if the value is not finite and positive."""
    val = k.jet(_point(k, x), order=0).value
    check_positive(val)
    return float(val[0])


def grad_kernel(k, x) -> np.ndarray:
    g = k.jet(_point(k, x), order=1).grad[0]
    if not np.all(np.isfinite(g)):
        raise KernelDomainError(f"non-finite kernel gradient at {x!r}")
    return g


def hess_kernel(k, x) -> np.ndarray:
    h = k.jet(_point(k, x), order=2).hess[0]
    if not np.all(np.isfinite(h)):
        raise KernelDomainError(f"non-finite kernel Hessian at {x!r}")
    return h


def homotopy_eval(h: HomotopyKernel, x) -> float:
    return eval_kernel(h, x)


def homotopy_grad(h: HomotopyKernel, x) -> np.ndarray:
    return grad_kernel(h, x)


def homotopy_hess(h: HomotopyKernel, x) -> np.ndarray:
    return hess_kernel(h, x)
