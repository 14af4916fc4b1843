"""Syntax for independent-choice action theories and query files.

A theory file (.icl) declares object sorts, action symbols, fluent
predicates, a horizon, a logic program, a choice space (optionally with
probabilities), and default action executions.  A query file (.q) asks a
cause, explanation, or partial-explanation question against a theory.

The grammar is line-comment based (`%`), statement-terminated by `.`,
with uppercase identifiers as variables and lowercase as symbols.  Time
terms are the constant 0, a time variable, or `t+k`; bare numerals are
sugar for successor towers.  Bodies use `~`, `&`, `|` and `<=`, the
latter two desugared into the negation/conjunction core.  See the EBNF
in the README for the full grammar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Optional, Union


class IclError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(IclError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class ValidationError(IclError):
    """A structurally well-formed input that violates a theory invariant."""


class DomainError(IclError):
    """A query that talks about variables the model does not expose."""


# Reserved words.  They structure theory and query files and may not be
# used as sort, action, or predicate names.
KEYWORDS = frozenset({
    "sort", "action", "pred", "choice", "exec", "horizon",
    "do", "true", "false",
    "kind", "psi", "phi", "given", "alpha", "exec_mode",
    "weak_cause", "actual_cause", "explanation", "partial_explanation",
    "fixed", "overridable",
})

BUILTIN_SORTS = frozenset({"object", "action", "time"})


# ---------------------------------------------------------------------------
# Terms, atoms, formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Obj:
    """An object constant."""

    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class Act:
    """An action symbol applied to object terms."""

    name: str
    args: tuple = ()

    def __str__(self) -> str:
        if not self.args:
            return self.name
        return f"{self.name}({', '.join(str(a) for a in self.args)})"


@dataclass(frozen=True)
class Time:
    """A time term in successor normal form: `var + offset` or `offset`."""

    var: Optional[str]
    offset: int

    def __str__(self) -> str:
        if self.var is None:
            return str(self.offset)
        if self.offset == 0:
            return self.var
        return f"{self.var}+{self.offset}"


ObjectTerm = Union[Var, Obj]
ActionTerm = Union[Var, Act]
Term = Union[Var, Obj, Act, Time]


@dataclass(frozen=True)
class Atom:
    """A fluent atom `p(t1, ..., tk, s)` or an action atom `do(a, s)`.

    The trailing time argument is kept separately in `time`; `args` holds
    only the object/action arguments.
    """

    pred: str
    args: tuple
    time: Time

    def __str__(self) -> str:
        inner = [str(a) for a in self.args] + [str(self.time)]
        return f"{self.pred}({', '.join(inner)})"

    def is_ground(self) -> bool:
        return self.time.var is None and all(term_is_ground(a) for a in self.args)


def term_is_ground(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, Act):
        return all(term_is_ground(a) for a in t.args)
    if isinstance(t, Time):
        return t.var is None
    return True


class Formula:
    """Base class; the desugared core is {Falsum, Verum, AtomF, Not, And, Neq}."""

    __slots__ = ()


@dataclass(frozen=True)
class Falsum(Formula):
    def __str__(self) -> str:
        return "false"


@dataclass(frozen=True)
class Verum(Formula):
    def __str__(self) -> str:
        return "true"


@dataclass(frozen=True)
class AtomF(Formula):
    atom: Atom

    def __str__(self) -> str:
        return str(self.atom)


@dataclass(frozen=True)
class Not(Formula):
    sub: Formula

    def __str__(self) -> str:
        if isinstance(self.sub, (AtomF, Falsum, Verum, Not, Neq)):
            return f"~{self.sub}"
        return f"~({self.sub})"


@dataclass(frozen=True)
class And(Formula):
    left: Formula
    right: Formula

    def __str__(self) -> str:
        parts = []
        for f in (self.left, self.right):
            if isinstance(f, And) or not isinstance(f, (AtomF, Falsum, Verum, Not, Neq)):
                parts.append(f"({f})" if not isinstance(f, And) else str(f))
            else:
                parts.append(str(f))
        return " & ".join(parts)


@dataclass(frozen=True)
class Neq(Formula):
    """Built-in inequality over object terms, resolved away during grounding."""

    left: ObjectTerm
    right: ObjectTerm

    def __str__(self) -> str:
        return f"{self.left} \\= {self.right}"


def disj(left: Formula, right: Formula) -> Formula:
    """phi | psi, desugared to ~(~phi & ~psi)."""
    return Not(And(Not(left), Not(right)))


def implied(left: Formula, right: Formula) -> Formula:
    """phi <= psi, desugared to ~(~phi & psi)."""
    return Not(And(Not(left), right))


@dataclass(frozen=True)
class Clause:
    head: Atom
    body: Formula

    def __str__(self) -> str:
        if self.body == Verum():
            return f"{self.head}."
        return f"{self.head} <= {self.body}."


def formula_atoms(f: Formula) -> Iterator[Atom]:
    if isinstance(f, AtomF):
        yield f.atom
    elif isinstance(f, Not):
        yield from formula_atoms(f.sub)
    elif isinstance(f, And):
        yield from formula_atoms(f.left)
        yield from formula_atoms(f.right)


def conjunction_atoms(f: Formula) -> Optional[list[Atom]]:
    """The atoms of a pure conjunction of atoms, or None if f is not one."""
    if isinstance(f, AtomF):
        return [f.atom]
    if isinstance(f, And):
        left = conjunction_atoms(f.left)
        right = conjunction_atoms(f.right)
        if left is None or right is None:
            return None
        return left + right
    return None


# ---------------------------------------------------------------------------
# Vocabulary and theories
# ---------------------------------------------------------------------------

@dataclass
class Vocabulary:
    """Declared symbols.

    sorts maps a sort name to its object constants (sets may overlap);
    `object` denotes the union of all declared sorts.  actions and fluents
    map a symbol to its argument sort names; fluent arguments may also be
    `action`, and every fluent carries an implicit trailing time argument.
    """

    sorts: dict[str, tuple[str, ...]] = field(default_factory=dict)
    actions: dict[str, tuple[str, ...]] = field(default_factory=dict)
    fluents: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def objects_of(self, sort: str) -> tuple[str, ...]:
        if sort == "object":
            seen: dict[str, None] = {}
            for consts in self.sorts.values():
                for c in consts:
                    seen.setdefault(c)
            return tuple(seen)
        return self.sorts[sort]

    def has_constant(self, name: str) -> bool:
        return any(name in consts for consts in self.sorts.values())

    def constant_in_sort(self, name: str, sort: str) -> bool:
        return name in self.objects_of(sort)

    def validate(self) -> None:
        for name in list(self.actions) + list(self.fluents):
            if name in KEYWORDS:
                raise ValidationError(f"reserved word used as symbol name: {name}")
        overlap = set(self.actions) & set(self.fluents)
        if overlap:
            raise ValidationError(
                f"names used as both action and predicate: {sorted(overlap)}")
        for name, arg_sorts in self.actions.items():
            for s in arg_sorts:
                if s in ("action", "time"):
                    raise ValidationError(
                        f"action {name}: argument sort must be an object sort")
                if s != "object" and s not in self.sorts:
                    raise ValidationError(f"action {name}: unknown sort {s}")
        for name, arg_sorts in self.fluents.items():
            for s in arg_sorts:
                if s == "time":
                    raise ValidationError(
                        f"predicate {name}: the time argument is implicit")
                if s not in ("object", "action") and s not in self.sorts:
                    raise ValidationError(f"predicate {name}: unknown sort {s}")


TotalChoice = frozenset  # of ground Atom, one per alternative


@dataclass
class IclTheory:
    """A parsed and validated theory.

    probabilities is None for a plain (non-probabilistic) theory, otherwise
    a map from each atomic choice to its probability as an exact rational.
    """

    vocabulary: Vocabulary
    program: tuple[Clause, ...]
    choice_space: tuple[tuple[Atom, ...], ...]
    probabilities: Optional[dict[Atom, Fraction]]
    executions: tuple[Atom, ...]
    horizon: int

    @property
    def choice_atoms(self) -> frozenset:
        return frozenset(a for alt in self.choice_space for a in alt)

    def is_total_choice(self, atoms: frozenset) -> bool:
        if not atoms <= self.choice_atoms:
            return False
        return all(len(atoms & set(alt)) == 1 for alt in self.choice_space)

    def with_clauses(self, extra: list[Clause]) -> "IclTheory":
        return IclTheory(self.vocabulary, self.program + tuple(extra),
                         self.choice_space, self.probabilities,
                         self.executions, self.horizon)

    def with_horizon(self, horizon: int) -> "IclTheory":
        if horizon < 0:
            raise ValidationError("horizon must be nonnegative")
        theory = IclTheory(self.vocabulary, self.program, self.choice_space,
                           self.probabilities, self.executions, horizon)
        validate_theory(theory)
        return theory


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

@dataclass
class CauseQuery:
    psi: tuple[Atom, ...]
    phi: Formula
    choice: TotalChoice
    executions: tuple[Atom, ...]
    mode: str  # "weak" | "actual"
    exec_mode: str  # "fixed" | "overridable"
    var_sorts: dict[str, tuple[str, frozenset]]


@dataclass
class ExplanationQuery:
    psi: tuple[Atom, ...]
    phi: Formula
    choices: tuple[TotalChoice, ...]
    executions: tuple[Atom, ...]
    exec_mode: str
    var_sorts: dict[str, tuple[str, frozenset]]


@dataclass
class PartialExplanationQuery:
    psi: tuple[Atom, ...]
    phi: Formula
    choices: tuple[TotalChoice, ...]
    executions: tuple[Atom, ...]
    exec_mode: str
    alpha: Optional[Fraction]
    var_sorts: dict[str, tuple[str, frozenset]]


Query = Union[CauseQuery, ExplanationQuery, PartialExplanationQuery]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_PUNCT = {
    "<=": "IMPLIED", "\\=": "NEQ",
    "(": "LPAREN", ")": "RPAREN", "{": "LBRACE", "}": "RBRACE",
    ",": "COMMA", ".": "DOT", ":": "COLON", "&": "AMP", "|": "PIPE",
    "~": "TILDE", "+": "PLUS", "=": "EQ", "/": "SLASH",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_RE = re.compile(r"\d+(\.\d+)?")


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        two = text[i:i + 2]
        if two in _PUNCT:
            tokens.append(Token(_PUNCT[two], two, line, col))
            i += 2
            col += 2
            continue
        if c.isdigit():
            m = _NUM_RE.match(text, i)
            lexeme = m.group(0)
            # A trailing '.' is a statement terminator, not a decimal point,
            # unless digits follow it.
            kind = "DECIMAL" if "." in lexeme else "INT"
            tokens.append(Token(kind, lexeme, line, col))
            i = m.end()
            col += len(lexeme)
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            lexeme = m.group(0)
            kind = "VAR" if lexeme[0].isupper() else "IDENT"
            tokens.append(Token(kind, lexeme, line, col))
            i = m.end()
            col += len(lexeme)
            continue
        if c in _PUNCT:
            tokens.append(Token(_PUNCT[c], c, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    tokens.append(Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, kind: str, what: str = "") -> Token:
        tok = self.peek()
        if tok.kind != kind:
            want = what or kind.lower()
            raise ParseError(f"expected {want}, found {tok.text!r}", tok.line, tok.col)
        return self.next()

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        return ParseError(message, tok.line, tok.col)

    def at_ident(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text == word

    # -- raw terms ----------------------------------------------------------

    def parse_raw_term(self):
        """Parse a term without sort context; coercion happens later."""
        tok = self.peek()
        if tok.kind == "VAR":
            self.next()
            if self.peek().kind == "PLUS":
                self.next()
                off = self.expect("INT", "time offset")
                return Time(tok.text, int(off.text))
            return Var(tok.text)
        if tok.kind == "INT":
            self.next()
            return Time(None, int(tok.text))
        if tok.kind == "IDENT":
            self.next()
            if self.peek().kind == "LPAREN":
                self.next()
                args = [self.parse_raw_term()]
                while self.peek().kind == "COMMA":
                    self.next()
                    args.append(self.parse_raw_term())
                self.expect("RPAREN")
                return Act(tok.text, tuple(args))
            return Obj(tok.text)
        raise self.error(f"expected a term, found {tok.text!r}")


class _TheoryParser(_Parser):
    def __init__(self, text: str):
        super().__init__(text)
        self.vocab = Vocabulary()
        self.clauses: list[Clause] = []
        self.alternatives: list[tuple[Atom, ...]] = []
        self.probabilities: dict[Atom, Fraction] = {}
        self.have_probs: Optional[bool] = None
        self.executions: list[Atom] = []
        self.horizon: Optional[int] = None

    def parse(self) -> IclTheory:
        while self.peek().kind != "EOF":
            self.statement()
        if self.horizon is None:
            raise ValidationError("missing horizon declaration")
        theory = IclTheory(
            vocabulary=self.vocab,
            program=tuple(self.clauses),
            choice_space=tuple(self.alternatives),
            probabilities=self.probabilities if self.have_probs else None,
            executions=tuple(self.executions),
            horizon=self.horizon,
        )
        validate_theory(theory)
        return theory

    def statement(self) -> None:
        tok = self.peek()
        if tok.kind == "IDENT" and tok.text in (
                "sort", "action", "pred", "choice", "exec", "horizon"):
            getattr(self, "decl_" + tok.text)()
        else:
            self.clause()

    def symbol_name(self, what: str) -> str:
        tok = self.expect("IDENT", f"{what} name")
        if tok.text in KEYWORDS:
            raise ParseError(f"reserved word {tok.text!r} used as {what} name",
                             tok.line, tok.col)
        return tok.text

    def decl_sort(self) -> None:
        self.next()
        tok = self.expect("IDENT", "sort name")
        if (tok.text in BUILTIN_SORTS and tok.text != "object") or tok.text in KEYWORDS:
            raise ParseError(f"reserved sort name {tok.text!r}", tok.line, tok.col)
        name = tok.text
        if name in self.vocab.sorts:
            raise ParseError(f"duplicate sort {name!r}", tok.line, tok.col)
        self.expect("EQ")
        self.expect("LBRACE")
        consts: list[str] = []
        if self.peek().kind != "RBRACE":
            consts.append(self.symbol_name("constant"))
            while self.peek().kind == "COMMA":
                self.next()
                consts.append(self.symbol_name("constant"))
        self.expect("RBRACE")
        self.expect("DOT")
        if len(set(consts)) != len(consts):
            raise ValidationError(f"sort {name}: duplicate constants")
        self.vocab.sorts[name] = tuple(consts)

    def _arg_sorts(self) -> tuple[str, ...]:
        if self.peek().kind != "LPAREN":
            return ()
        self.next()
        if self.peek().kind == "RPAREN":
            self.next()
            return ()
        sorts = [self.expect("IDENT", "sort name").text]
        while self.peek().kind == "COMMA":
            self.next()
            sorts.append(self.expect("IDENT", "sort name").text)
        self.expect("RPAREN")
        return tuple(sorts)

    def decl_action(self) -> None:
        self.next()
        name = self.symbol_name("action")
        if name in self.vocab.actions:
            raise ValidationError(f"duplicate action {name!r}")
        self.vocab.actions[name] = self._arg_sorts()
        self.expect("DOT")

    def decl_pred(self) -> None:
        self.next()
        name = self.symbol_name("predicate")
        if name in self.vocab.fluents:
            raise ValidationError(f"duplicate predicate {name!r}")
        self.vocab.fluents[name] = self._arg_sorts()
        self.expect("DOT")

    def decl_horizon(self) -> None:
        self.next()
        tok = self.expect("INT", "horizon value")
        if self.horizon is not None:
            raise ParseError("duplicate horizon declaration", tok.line, tok.col)
        self.horizon = int(tok.text)
        self.expect("DOT")

    def decl_choice(self) -> None:
        self.next()
        self.expect("LBRACE")
        atoms: list[Atom] = []
        probs: list[Optional[Fraction]] = []
        while True:
            tok = self.peek()
            atom = self.atom(require_ground=True)
            if atom.pred == "do":
                raise ParseError("atomic choices must be fluent atoms",
                                 tok.line, tok.col)
            atoms.append(atom)
            if self.peek().kind == "COLON":
                self.next()
                probs.append(self.number())
            else:
                probs.append(None)
            if self.peek().kind == "COMMA":
                self.next()
                continue
            break
        self.expect("RBRACE")
        self.expect("DOT")
        with_probs = [p is not None for p in probs]
        if any(with_probs) and not all(with_probs):
            raise ValidationError(
                "an alternative must give probabilities for all or none of "
                "its atomic choices")
        got_probs = all(with_probs) and bool(probs)
        if self.have_probs is None:
            self.have_probs = got_probs
        elif self.have_probs != got_probs:
            raise ValidationError(
                "either every alternative carries probabilities or none does")
        self.alternatives.append(tuple(atoms))
        if got_probs:
            for atom, p in zip(atoms, probs):
                self.probabilities[atom] = p

    def decl_exec(self) -> None:
        self.next()
        tok = self.peek()
        atom = self.atom(require_ground=True)
        if atom.pred != "do":
            raise ParseError("exec expects a ground do(...) atom", tok.line, tok.col)
        self.executions.append(atom)
        self.expect("DOT")

    def number(self) -> Fraction:
        tok = self.peek()
        if tok.kind == "DECIMAL":
            self.next()
            return Fraction(tok.text)
        if tok.kind == "INT":
            self.next()
            value = Fraction(int(tok.text))
            if self.peek().kind == "SLASH":
                self.next()
                den = self.expect("INT", "denominator")
                value = Fraction(int(tok.text), int(den.text))
            return value
        raise self.error("expected a number")

    # -- atoms, formulas, clauses -------------------------------------------

    def coerce_object(self, raw, sort: str, tok: Token, var_sorts) -> ObjectTerm:
        if isinstance(raw, Var):
            kind, sorts = var_sorts.setdefault(raw.name, ("object", set()))
            if kind != "object":
                raise ParseError(f"variable {raw.name} used with conflicting sorts",
                                 tok.line, tok.col)
            sorts.add(sort)
            return raw
        if isinstance(raw, Obj):
            if not self.vocab.has_constant(raw.name):
                raise ParseError(f"unknown constant {raw.name!r}", tok.line, tok.col)
            if not self.vocab.constant_in_sort(raw.name, sort):
                raise ParseError(f"constant {raw.name!r} is not of sort {sort}",
                                 tok.line, tok.col)
            return raw
        raise ParseError(f"expected an object term of sort {sort}", tok.line, tok.col)

    def coerce_action(self, raw, tok: Token, var_sorts) -> ActionTerm:
        if isinstance(raw, Var):
            kind, _ = var_sorts.setdefault(raw.name, ("action", set()))
            if kind != "action":
                raise ParseError(f"variable {raw.name} used with conflicting sorts",
                                 tok.line, tok.col)
            return raw
        if isinstance(raw, Obj):  # 0-ary action written without parens
            raw = Act(raw.name, ())
        if isinstance(raw, Act):
            if raw.name not in self.vocab.actions:
                raise ParseError(f"unknown action {raw.name!r}", tok.line, tok.col)
            sorts = self.vocab.actions[raw.name]
            if len(raw.args) != len(sorts):
                raise ParseError(
                    f"action {raw.name} expects {len(sorts)} argument(s), "
                    f"got {len(raw.args)}", tok.line, tok.col)
            args = tuple(self.coerce_object(a, s, tok, var_sorts)
                         for a, s in zip(raw.args, sorts))
            return Act(raw.name, args)
        raise ParseError("expected an action term", tok.line, tok.col)

    def coerce_time(self, raw, tok: Token, var_sorts) -> Time:
        if isinstance(raw, Time):
            if raw.var is not None:
                kind, _ = var_sorts.setdefault(raw.var, ("time", set()))
                if kind != "time":
                    raise ParseError(f"variable {raw.var} used with conflicting sorts",
                                     tok.line, tok.col)
            return raw
        if isinstance(raw, Var):
            kind, _ = var_sorts.setdefault(raw.name, ("time", set()))
            if kind != "time":
                raise ParseError(f"variable {raw.name} used with conflicting sorts",
                                 tok.line, tok.col)
            return Time(raw.name, 0)
        raise ParseError("expected a time term", tok.line, tok.col)

    def atom(self, require_ground: bool = False, var_sorts=None) -> Atom:
        own = var_sorts is None
        if own:
            var_sorts = {}
        tok = self.expect("IDENT", "a predicate name")
        name = tok.text
        self.expect("LPAREN")
        raws: list[tuple] = [(self.parse_raw_term(), self.peek())]
        while self.peek().kind == "COMMA":
            self.next()
            raws.append((self.parse_raw_term(), self.peek()))
        self.expect("RPAREN")
        if name == "do":
            if len(raws) != 2:
                raise ParseError("do expects an action and a time", tok.line, tok.col)
            action = self.coerce_action(raws[0][0], tok, var_sorts)
            time = self.coerce_time(raws[1][0], tok, var_sorts)
            atom = Atom("do", (action,), time)
        elif name in self.vocab.fluents:
            sorts = self.vocab.fluents[name]
            if len(raws) != len(sorts) + 1:
                raise ParseError(
                    f"predicate {name} expects {len(sorts)} argument(s) plus a "
                    f"time, got {len(raws)}", tok.line, tok.col)
            args = []
            for (raw, _), s in zip(raws[:-1], sorts):
                if s == "action":
                    args.append(self.coerce_action(raw, tok, var_sorts))
                else:
                    args.append(self.coerce_object(raw, s, tok, var_sorts))
            time = self.coerce_time(raws[-1][0], tok, var_sorts)
            atom = Atom(name, tuple(args), time)
        else:
            raise ParseError(f"unknown predicate {name!r}", tok.line, tok.col)
        if require_ground and not atom.is_ground():
            raise ParseError("a ground atom is required here", tok.line, tok.col)
        return atom

    def formula(self, var_sorts) -> Formula:
        left = self.disjunction(var_sorts)
        if self.peek().kind == "IMPLIED":
            self.next()
            right = self.formula(var_sorts)
            return implied(left, right)
        return left

    def disjunction(self, var_sorts) -> Formula:
        f = self.conjunction(var_sorts)
        while self.peek().kind == "PIPE":
            self.next()
            f = disj(f, self.conjunction(var_sorts))
        return f

    def conjunction(self, var_sorts) -> Formula:
        f = self.unary(var_sorts)
        while self.peek().kind == "AMP":
            self.next()
            f = And(f, self.unary(var_sorts))
        return f

    def unary(self, var_sorts) -> Formula:
        tok = self.peek()
        if tok.kind == "TILDE":
            self.next()
            return Not(self.unary(var_sorts))
        if tok.kind == "LPAREN":
            self.next()
            f = self.formula(var_sorts)
            self.expect("RPAREN")
            return f
        if self.at_ident("true"):
            self.next()
            return Verum()
        if self.at_ident("false"):
            self.next()
            return Falsum()
        # Either an atom or a built-in inequality between object terms.
        # Source object terms are constants or variables, so an inequality
        # starts with a variable or a bare identifier.
        if tok.kind == "VAR" or (
                tok.kind == "IDENT" and self.peek(1).kind != "LPAREN"):
            left = self.parse_raw_term()
            self.expect("NEQ", "'\\='")
            right_tok = self.peek()
            right = self.parse_raw_term()
            lhs = self._as_object_term(left, tok, var_sorts)
            rhs = self._as_object_term(right, right_tok, var_sorts)
            return Neq(lhs, rhs)
        return AtomF(self.atom(var_sorts=var_sorts))

    def _as_object_term(self, raw, tok: Token, var_sorts) -> ObjectTerm:
        if isinstance(raw, Var):
            kind, _ = var_sorts.setdefault(raw.name, ("object", set()))
            if kind != "object":
                raise ParseError(f"variable {raw.name} used with conflicting sorts",
                                 tok.line, tok.col)
            return raw
        if isinstance(raw, Obj):
            if not self.vocab.has_constant(raw.name):
                raise ParseError(f"unknown constant {raw.name!r}", tok.line, tok.col)
            return raw
        raise ParseError("inequality compares object terms", tok.line, tok.col)

    def clause(self) -> None:
        var_sorts: dict = {}
        head = self.atom(var_sorts=var_sorts)
        if self.peek().kind == "IMPLIED":
            self.next()
            body = self.formula(var_sorts)
        else:
            body = Verum()
        self.expect("DOT")
        self.clauses.append(Clause(head, body))


def validate_theory(theory: IclTheory) -> None:
    """Check the theory invariants that do not require grounding."""
    theory.vocabulary.validate()
    if theory.horizon < 0:
        raise ValidationError("horizon must be nonnegative")
    seen: set = set()
    for alt in theory.choice_space:
        if not alt:
            raise ValidationError("empty alternative in choice space")
        for atom in alt:
            if atom in seen:
                raise ValidationError(
                    f"alternatives overlap on atomic choice {atom}")
            seen.add(atom)
            if atom.time.offset > theory.horizon:
                raise ValidationError(
                    f"atomic choice {atom} mentions a time beyond the horizon")
    if theory.probabilities is not None:
        for alt in theory.choice_space:
            total = sum(theory.probabilities[a] for a in alt)
            if abs(total - 1) > Fraction(1, 10**9):
                raise ValidationError(
                    f"probabilities in alternative {{{', '.join(map(str, alt))}}} "
                    f"sum to {total}, not 1")
            for a in alt:
                if not 0 <= theory.probabilities[a] <= 1:
                    raise ValidationError(f"probability of {a} outside [0, 1]")
    for atom in theory.executions:
        if atom.pred != "do":
            raise ValidationError(f"execution {atom} is not a do atom")
        if atom.time.offset > theory.horizon:
            raise ValidationError(f"execution {atom} beyond the horizon")
    for atom in seen:
        for clause in theory.program:
            if _head_covers(clause.head, atom, theory):
                raise ValidationError(
                    f"atomic choice {atom} clashes with the head of clause "
                    f"{clause}")


def _head_covers(head: Atom, ground: Atom, theory: IclTheory) -> bool:
    """Whether some ground instance of `head` equals the ground atom."""
    if head.pred != ground.pred or len(head.args) != len(ground.args):
        return False
    binding: dict[str, object] = {}

    def match_obj(pat, val) -> bool:
        if isinstance(pat, Var):
            if pat.name in binding:
                return binding[pat.name] == val
            binding[pat.name] = val
            return True
        return pat == val

    def match_action(pat, val) -> bool:
        if isinstance(pat, Var):
            if pat.name in binding:
                return binding[pat.name] == val
            binding[pat.name] = val
            return True
        if not isinstance(val, Act) or pat.name != val.name:
            return False
        return all(match_obj(p, v) for p, v in zip(pat.args, val.args))

    for pat, val in zip(head.args, ground.args):
        if isinstance(pat, (Act,)) or isinstance(val, Act):
            if not match_action(pat, val):
                return False
        else:
            if not match_obj(pat, val):
                return False
    t = head.time
    if t.var is None:
        return t.offset == ground.time.offset
    return ground.time.offset >= t.offset  # T + k == n solvable with T >= 0


def parse_theory(text: str) -> IclTheory:
    """Parse theory source into a validated IclTheory."""
    return _TheoryParser(text).parse()


# ---------------------------------------------------------------------------
# Query parsing
# ---------------------------------------------------------------------------

class _QueryParser(_TheoryParser):
    """Reuses the atom/formula machinery against an existing vocabulary."""

    def __init__(self, text: str, theory: IclTheory):
        _Parser.__init__(self, text)
        self.theory = theory
        self.vocab = theory.vocabulary
        self.kind: Optional[str] = None
        self.psi: Optional[tuple[Atom, ...]] = None
        self.phi: Optional[Formula] = None
        self.given: list[TotalChoice] = []
        self.execs: list[Atom] = []
        self.alpha: Optional[Fraction] = None
        self.exec_mode = "fixed"
        self.var_sorts: dict = {}

    def parse_query(self) -> Query:
        while self.peek().kind != "EOF":
            self.query_statement()
        if self.kind is None:
            raise ValidationError("query file does not declare a kind")
        if self.psi is None or self.phi is None:
            raise ValidationError("query must declare both psi and phi")
        if not self.given:
            raise ValidationError("query must declare at least one total choice")
        self._check_times()
        common = dict(psi=self.psi, phi=self.phi,
                      executions=tuple(self.execs), exec_mode=self.exec_mode,
                      var_sorts=dict(self.var_sorts))
        if self.kind in ("weak_cause", "actual_cause"):
            if len(self.given) != 1:
                raise ValidationError("a cause query takes exactly one total choice")
            if self.alpha is not None:
                raise ValidationError("alpha applies only to partial explanations")
            mode = "weak" if self.kind == "weak_cause" else "actual"
            return CauseQuery(choice=self.given[0], mode=mode, **common)
        if self.kind == "explanation":
            if self.alpha is not None:
                raise ValidationError("alpha applies only to partial explanations")
            return ExplanationQuery(choices=tuple(self.given), **common)
        return PartialExplanationQuery(choices=tuple(self.given),
                                       alpha=self.alpha, **common)

    def query_statement(self) -> None:
        tok = self.peek()
        if tok.kind != "IDENT":
            raise self.error("expected a query statement")
        word = tok.text
        if word == "kind":
            self.next()
            k = self.expect("IDENT", "query kind")
            if k.text not in ("weak_cause", "actual_cause", "explanation",
                              "partial_explanation"):
                raise ParseError(f"unknown query kind {k.text!r}", k.line, k.col)
            self.kind = k.text
            self.expect("DOT")
        elif word == "psi":
            self.next()
            f = self.formula(self.var_sorts)
            atoms = conjunction_atoms(f)
            if atoms is None:
                raise ParseError("psi must be a conjunction of atoms",
                                 tok.line, tok.col)
            self.psi = tuple(atoms)
            self.expect("DOT")
        elif word == "phi":
            self.next()
            self.phi = self.formula(self.var_sorts)
            self.expect("DOT")
        elif word == "given":
            self.next()
            self.expect("LBRACE")
            atoms = [self.atom(require_ground=True)]
            while self.peek().kind == "COMMA":
                self.next()
                atoms.append(self.atom(require_ground=True))
            self.expect("RBRACE")
            self.expect("DOT")
            choice = frozenset(atoms)
            if not self.theory.is_total_choice(choice):
                raise ValidationError(
                    f"{{{', '.join(map(str, atoms))}}} is not a total choice")
            self.given.append(choice)
        elif word == "exec":
            self.next()
            atom = self.atom(require_ground=True)
            if atom.pred != "do":
                raise ParseError("exec expects a ground do(...) atom",
                                 tok.line, tok.col)
            self.execs.append(atom)
            self.expect("DOT")
        elif word == "alpha":
            self.next()
            self.alpha = self.number()
            if not 0 <= self.alpha <= 1:
                raise ValidationError("alpha must lie in [0, 1]")
            self.expect("DOT")
        elif word == "exec_mode":
            self.next()
            m = self.expect("IDENT", "fixed or overridable")
            if m.text not in ("fixed", "overridable"):
                raise ParseError("exec_mode is fixed or overridable", m.line, m.col)
            self.exec_mode = m.text
            self.expect("DOT")
        else:
            raise self.error(f"unknown query statement {word!r}")

    def _check_times(self) -> None:
        h = self.theory.horizon
        atoms = list(self.psi) + list(formula_atoms(self.phi)) + list(self.execs)
        for atom in atoms:
            if atom.time.var is None and atom.time.offset > h:
                raise ValidationError(
                    f"{atom} mentions time {atom.time.offset} beyond horizon {h}")


def parse_query(text: str, theory: IclTheory) -> Query:
    """Parse query source against a theory's vocabulary and choice space."""
    return _QueryParser(text, theory).parse_query()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_probability(p: Fraction) -> str:
    """Exact decimal when the denominator is 2^a * 5^b, else num/den."""
    den = p.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{p.numerator}/{p.denominator}"
    shift = max(twos, fives)
    scaled = p.numerator * 10**shift // p.denominator
    if shift == 0:
        return str(scaled)
    digits = str(scaled).rjust(shift + 1, "0")
    return f"{digits[:-shift]}.{digits[-shift:]}"


def render_theory(theory: IclTheory) -> str:
    """Canonical source text; parse_theory(render_theory(t)) == t."""
    lines: list[str] = []
    v = theory.vocabulary
    for name, consts in v.sorts.items():
        lines.append(f"sort {name} = {{{', '.join(consts)}}}.")
    for name, sorts in v.actions.items():
        suffix = f"({', '.join(sorts)})" if sorts else ""
        lines.append(f"action {name}{suffix}.")
    for name, sorts in v.fluents.items():
        suffix = f"({', '.join(sorts)})" if sorts else ""
        lines.append(f"pred {name}{suffix}.")
    lines.append(f"horizon {theory.horizon}.")
    for clause in theory.program:
        lines.append(str(clause))
    for alt in theory.choice_space:
        if theory.probabilities is not None:
            entries = ", ".join(
                f"{a} : {render_probability(theory.probabilities[a])}" for a in alt)
        else:
            entries = ", ".join(str(a) for a in alt)
        lines.append(f"choice {{{entries}}}.")
    for atom in theory.executions:
        lines.append(f"exec {atom}.")
    return "\n".join(lines) + "\n"
