"""Monotone access policies and their linear secret-sharing programs.

Grammar (keywords are case-insensitive, attributes may be double-quoted)::

    expr   := term (OR term)*
    term   := factor (AND factor)*
    factor := ATTR | K-of-(expr, expr, ...) | ( expr )

Row indices of an :class:`LsssProgram` are 0-based.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .groupmath import CURVE_ORDER


class PolicyError(ValueError):
    pass


class PolicySyntaxError(PolicyError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class Leaf:
    name: str

    def __str__(self) -> str:
        return _quote(self.name)


@dataclass(frozen=True)
class And:
    children: tuple["PolicyAst", ...]

    def __str__(self) -> str:
        return " AND ".join(_wrap(c, And) for c in self.children)


@dataclass(frozen=True)
class Or:
    children: tuple["PolicyAst", ...]

    def __str__(self) -> str:
        return " OR ".join(_wrap(c, Or) for c in self.children)


@dataclass(frozen=True)
class Threshold:
    k: int
    children: tuple["PolicyAst", ...]

    def __str__(self) -> str:
        return f"{self.k}-of-(" + ", ".join(str(c) for c in self.children) + ")"


PolicyAst = Union[Leaf, And, Or, Threshold]

_BARE = re.compile(r'[^\s(),"]+')


def _quote(name: str) -> str:
    if _BARE.fullmatch(name) and name.upper() not in ("AND", "OR") and not _THRESH.match(name + "("):
        return name
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _wrap(child: PolicyAst, parent: type) -> str:
    # Or inside And always needs parens; same-type nesting keeps them to
    # preserve tree shape on a round trip.
    if isinstance(child, (And, Or)):
        return f"({child})"
    return str(child)


@dataclass(frozen=True)
class PolicyLimits:
    max_depth: int = 64
    max_arity: int = 1024


# -- parsing --------------------------------------------------------------

_THRESH = re.compile(r"(\d+)-of-\(")
_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<thresh>\d+-of-\()
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<quoted>"(?:[^"\\]|\\.)*")
  | (?P<bare>[^\s(),"]+)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        value = m.group()
        if kind == "quoted":
            value = re.sub(r"\\(.)", r"\1", value[1:-1])
            if not value:
                raise PolicySyntaxError("empty attribute name", pos)
            tokens.append(("attr", value, pos))
        elif kind == "bare":
            upper = value.upper()
            tokens.append((upper.lower(), value, pos) if upper in ("AND", "OR") else ("attr", value, pos))
        elif kind == "thresh":
            tokens.append(("thresh", _THRESH.match(value).group(1), pos))
        elif kind != "ws":
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, limits: PolicyLimits):
        self.tokens = _tokenize(text)
        self.i = 0
        self.limits = limits

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self, kind: str) -> tuple[str, str, int]:
        tok = self.peek()
        if tok[0] != kind:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise PolicySyntaxError(f"expected {kind}, found {what}", tok[2])
        self.i += 1
        return tok

    def expr(self, depth: int) -> PolicyAst:
        if depth > self.limits.max_depth:
            raise PolicySyntaxError("policy nested too deeply", self.peek()[2])
        terms = [self.term(depth)]
        while self.peek()[0] == "or":
            self.i += 1
            terms.append(self.term(depth))
        return terms[0] if len(terms) == 1 else Or(self._arity(terms))

    def term(self, depth: int) -> PolicyAst:
        factors = [self.factor(depth)]
        while self.peek()[0] == "and":
            self.i += 1
            factors.append(self.factor(depth))
        return factors[0] if len(factors) == 1 else And(self._arity(factors))

    def factor(self, depth: int) -> PolicyAst:
        kind, value, pos = self.peek()
        if kind == "attr":
            self.i += 1
            return Leaf(value)
        if kind == "lparen":
            self.i += 1
            node = self.expr(depth + 1)
            self.take("rparen")
            return node
        if kind == "thresh":
            self.i += 1
            k = int(value)
            children = [self.expr(depth + 1)]
            while self.peek()[0] == "comma":
                self.i += 1
                children.append(self.expr(depth + 1))
            self.take("rparen")
            if not 1 <= k <= len(children):
                raise PolicySyntaxError(f"threshold {k} outside 1..{len(children)}", pos)
            return Threshold(k, self._arity(children))
        what = "end of input" if kind == "end" else repr(value)
        raise PolicySyntaxError(f"expected attribute or '(', found {what}", pos)

    def _arity(self, children: list[PolicyAst]) -> tuple[PolicyAst, ...]:
        if len(children) > self.limits.max_arity:
            raise PolicySyntaxError("gate has too many inputs", self.peek()[2])
        return tuple(children)


def parse_policy(text: str, limits: PolicyLimits = PolicyLimits()) -> PolicyAst:
    if not text.strip():
        raise PolicySyntaxError("empty policy", 0)
    parser = _Parser(text, limits)
    ast = parser.expr(0)
    parser.take("end")
    return ast


def leaves(ast: PolicyAst) -> list[str]:
    if isinstance(ast, Leaf):
        return [ast.name]
    return [name for child in ast.children for name in leaves(child)]


def satisfies(ast: PolicyAst, attrs: Iterable[str]) -> bool:
    held = attrs if isinstance(attrs, (set, frozenset)) else set(attrs)
    if isinstance(ast, Leaf):
        return ast.name in held
    hits = sum(satisfies(c, held) for c in ast.children)
    if isinstance(ast, And):
        return hits == len(ast.children)
    if isinstance(ast, Or):
        return hits >= 1
    return hits >= ast.k


# -- LSSS ------------------------------------------------------------------


@dataclass(frozen=True)
class LsssProgram:
    """Share-generating matrix ``matrix`` (l x q over Z_p) and row labels ``rho``."""

    matrix: tuple[tuple[int, ...], ...]
    rho: tuple[str, ...]

    @property
    def rows(self) -> int:
        return len(self.matrix)

    @property
    def cols(self) -> int:
        return len(self.matrix[0]) if self.matrix else 0


def compile_lsss(ast: PolicyAst, *, strict: bool = False, modulus: int = CURVE_ORDER) -> LsssProgram:
    """Build (M, rho) with the recursive Lewko-Waters construction.

    OR children reuse the parent vector, an n-input AND adds n-1 columns
    (telescoping +1/-1 chain) and a proper k-of-n gate adds k-1 columns
    holding powers of the child index.
    """
    names = leaves(ast)
    if strict and len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise PolicyError(f"strict mode: attribute used more than once: {', '.join(dupes)}")

    rows: list[dict[int, int]] = []
    rho: list[str] = []
    width = 1

    def walk(node: PolicyAst, vec: dict[int, int]) -> None:
        nonlocal width
        if isinstance(node, Leaf):
            rows.append(vec)
            rho.append(node.name)
            return
        n = len(node.children)
        k = {And: n, Or: 1}.get(type(node), getattr(node, "k", None))
        if k == 1:
            for child in node.children:
                walk(child, vec)
        elif k == n:
            base = width
            width += n - 1
            for i, child in enumerate(node.children):
                if i == 0:
                    cv = dict(vec)
                    cv[base] = 1
                else:
                    cv = {base + i - 1: modulus - 1}
                    if i < n - 1:
                        cv[base + i] = 1
                walk(child, cv)
        else:
            base = width
            width += k - 1
            for i, child in enumerate(node.children, start=1):
                cv = dict(vec)
                for j in range(1, k):
                    cv[base + j - 1] = pow(i, j, modulus)
                walk(child, cv)

    walk(ast, {0: 1})
    matrix = tuple(tuple(r.get(j, 0) % modulus for j in range(width)) for r in rows)
    return LsssProgram(matrix, tuple(rho))


def share_secret(prog: LsssProgram, vector: Sequence[int], modulus: int = CURVE_ORDER) -> list[int]:
    """lambda_tau = M_tau . v for the sharing vector v = (s, y_2, ..., y_q)."""
    if len(vector) != prog.cols:
        raise PolicyError(f"sharing vector must have {prog.cols} entries")
    return [sum(m * v for m, v in zip(row, vector)) % modulus for row in prog.matrix]


def reconstruction_coeffs(
    prog: LsssProgram, attrs: Iterable[str], modulus: int = CURVE_ORDER
) -> dict[int, int] | None:
    """Solve sum(omega_tau * M_tau) = (1, 0, ..., 0) over the rows the attributes unlock.

    Returns ``None`` when the attribute set is unauthorized.  Elimination
    pivots on the lowest free row index; rows left without a pivot get a
    zero coefficient, so the result covers every unlocked row.
    """
    held = set(attrs)
    unlocked = [t for t, name in enumerate(prog.rho) if name in held]
    if not unlocked:
        return None
    q = prog.cols
    # one equation per column, one unknown per unlocked row
    system = [[prog.matrix[t][j] for t in unlocked] + [1 if j == 0 else 0] for j in range(q)]
    pivots: list[int] = []
    r = 0
    for c in range(len(unlocked)):
        pr = next((i for i in range(r, q) if system[i][c]), None)
        if pr is None:
            continue
        system[r], system[pr] = system[pr], system[r]
        inv = pow(system[r][c], -1, modulus)
        system[r] = [v * inv % modulus for v in system[r]]
        for i in range(q):
            if i != r and system[i][c]:
                f = system[i][c]
                system[i] = [(a - f * b) % modulus for a, b in zip(system[i], system[r])]
        pivots.append(c)
        r += 1
        if r == q:
            break
    if any(system[i][-1] for i in range(r, q)):
        return None
    omega = dict.fromkeys(unlocked, 0)
    for row, c in enumerate(pivots):
        omega[unlocked[c]] = system[row][-1]
    return omega
