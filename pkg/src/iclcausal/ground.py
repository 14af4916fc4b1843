"""Horizon-bounded grounding, acyclicity checking, and answer sets.

Ground atoms are interned as plain tuples so they can serve as dict keys
throughout the pipeline.  Ground formulas are encoded as nested tuples:
("true",), ("false",), ("atom", GAtom), ("not", f), ("and", f, g).
Built-in inequalities are evaluated during grounding; an instance whose
body folds to false is dropped, so ground programs carry no guards.
"""

from __future__ import annotations

from itertools import product
from typing import Callable, Iterator, NamedTuple, Optional

from .lang import (
    Act, And, Atom, AtomF, Clause, Falsum, IclTheory, Neq, Not, Obj, Time,
    ValidationError, Var, Verum, Vocabulary, Formula,
)


class GAtom(NamedTuple):
    """An interned ground atom; args hold constants and ground actions."""

    pred: str
    args: tuple
    time: int


GAction = tuple  # (symbol, (constant, ...))

DEFAULT_MAX_ATOMS = 100_000


def render_ground_term(t) -> str:
    if isinstance(t, str):
        return t
    name, args = t
    if not args:
        return name
    return f"{name}({','.join(render_ground_term(a) for a in args)})"


def render_atom(atom: GAtom) -> str:
    parts = [render_ground_term(a) for a in atom.args] + [str(atom.time)]
    return f"{atom.pred}({','.join(parts)})"


def freeze_atom(atom: Atom) -> GAtom:
    """Convert a ground syntax-level atom into its interned form."""
    if not atom.is_ground():
        raise ValidationError(f"atom {atom} is not ground")
    return GAtom(atom.pred, tuple(_freeze_term(a) for a in atom.args),
                 atom.time.offset)


def _freeze_term(t):
    if isinstance(t, Obj):
        return t.name
    if isinstance(t, Act):
        return (t.name, tuple(_freeze_term(a) for a in t.args))
    raise ValidationError(f"term {t} is not ground")


def thaw_atom(g: GAtom) -> Atom:
    """Convert an interned ground atom back into syntax."""
    return Atom(g.pred, tuple(_thaw_term(a) for a in g.args),
                Time(None, g.time))


def _thaw_term(t):
    if isinstance(t, str):
        return Obj(t)
    name, args = t
    return Act(name, tuple(_thaw_term(a) for a in args))


# ---------------------------------------------------------------------------
# Ground formulas
# ---------------------------------------------------------------------------

GF_TRUE = ("true",)
GF_FALSE = ("false",)


def gf_atoms(gf) -> Iterator[GAtom]:
    tag = gf[0]
    if tag == "atom":
        yield gf[1]
    elif tag == "not":
        yield from gf_atoms(gf[1])
    elif tag == "and":
        yield from gf_atoms(gf[1])
        yield from gf_atoms(gf[2])


def gf_eval(gf, truth: Callable[[GAtom], bool]) -> bool:
    tag = gf[0]
    if tag == "atom":
        return truth(gf[1])
    if tag == "not":
        return not gf_eval(gf[1], truth)
    if tag == "and":
        return gf_eval(gf[1], truth) and gf_eval(gf[2], truth)
    return tag == "true"


def render_gf(gf) -> str:
    tag = gf[0]
    if tag == "atom":
        return render_atom(gf[1])
    if tag == "not":
        sub = render_gf(gf[1])
        return f"~({sub})" if gf[1][0] == "and" else f"~{sub}"
    if tag == "and":
        parts = []
        for f in (gf[1], gf[2]):
            parts.append(render_gf(f))
        return " & ".join(parts)
    return tag


# ---------------------------------------------------------------------------
# Herbrand universe and base
# ---------------------------------------------------------------------------

class HerbrandUniverse:
    """All ground object terms, ground actions, and times up to the horizon."""

    def __init__(self, vocab: Vocabulary, horizon: int):
        self.vocab = vocab
        self.horizon = horizon
        self.objects: tuple[str, ...] = vocab.objects_of("object")
        self.times = tuple(range(horizon + 1))
        actions: list[GAction] = []
        for name, sorts in vocab.actions.items():
            pools = [vocab.objects_of(s) for s in sorts]
            for combo in product(*pools):
                actions.append((name, tuple(combo)))
        self.actions: tuple[GAction, ...] = tuple(actions)

    def objects_of(self, sorts: frozenset) -> tuple[str, ...]:
        """Constants admitted by every sort constraint (union if none)."""
        if not sorts:
            return self.objects
        pools = [set(self.vocab.objects_of(s)) for s in sorts]
        admitted = set.intersection(*pools)
        return tuple(c for c in self.objects if c in admitted)


def herbrand_base(vocab: Vocabulary, universe: HerbrandUniverse,
                  max_atoms: int = DEFAULT_MAX_ATOMS) -> list[GAtom]:
    count = len(universe.actions) * len(universe.times)
    for sorts in vocab.fluents.values():
        n = 1
        for s in sorts:
            n *= len(universe.actions) if s == "action" else len(vocab.objects_of(s))
        count += n * len(universe.times)
    if count > max_atoms:
        raise ValidationError(
            f"Herbrand base would hold {count} atoms, above the cap {max_atoms}")
    atoms: list[GAtom] = []
    for name, sorts in vocab.fluents.items():
        pools = [universe.actions if s == "action" else vocab.objects_of(s)
                 for s in sorts]
        for combo in product(*pools):
            for t in universe.times:
                atoms.append(GAtom(name, tuple(combo), t))
    for action in universe.actions:
        for t in universe.times:
            atoms.append(GAtom("do", (action,), t))
    atoms.sort(key=lambda a: (a.time, a.pred, repr(a.args)))
    return atoms


# ---------------------------------------------------------------------------
# Substitutions
# ---------------------------------------------------------------------------

def clause_var_constraints(vocab: Vocabulary, clause: Clause) -> dict:
    """Infer each variable's kind and sort constraints from its positions."""
    constraints: dict[str, tuple[str, set]] = {}

    def note(name: str, kind: str, sort: Optional[str]) -> None:
        entry = constraints.setdefault(name, (kind, set()))
        if entry[0] != kind:
            raise ValidationError(
                f"variable {name} used with conflicting sorts in {clause}")
        if sort is not None:
            entry[1].add(sort)

    def walk_object(term, sort: Optional[str]) -> None:
        if isinstance(term, Var):
            note(term.name, "object", sort)

    def walk_action(term) -> None:
        if isinstance(term, Var):
            note(term.name, "action", None)
        elif isinstance(term, Act):
            for a, s in zip(term.args, vocab.actions[term.name]):
                walk_object(a, s)

    def walk_atom(atom: Atom) -> None:
        if atom.pred == "do":
            walk_action(atom.args[0])
        else:
            for a, s in zip(atom.args, vocab.fluents[atom.pred]):
                if s == "action":
                    walk_action(a)
                else:
                    walk_object(a, s)
        if atom.time.var is not None:
            note(atom.time.var, "time", None)

    def walk_formula(f: Formula) -> None:
        if isinstance(f, AtomF):
            walk_atom(f.atom)
        elif isinstance(f, Not):
            walk_formula(f.sub)
        elif isinstance(f, And):
            walk_formula(f.left)
            walk_formula(f.right)
        elif isinstance(f, Neq):
            walk_object(f.left, None)
            walk_object(f.right, None)

    walk_atom(clause.head)
    walk_formula(clause.body)
    return {name: (kind, frozenset(sorts))
            for name, (kind, sorts) in constraints.items()}


def enumerate_substitutions(constraints: dict,
                            universe: HerbrandUniverse) -> Iterator[dict]:
    """All well-sorted ground substitutions for the constrained variables."""
    names = list(constraints)
    pools = []
    for name in names:
        kind, sorts = constraints[name]
        if kind == "object":
            pools.append(universe.objects_of(sorts))
        elif kind == "action":
            pools.append(universe.actions)
        else:
            pools.append(universe.times)
    for combo in product(*pools):
        yield dict(zip(names, combo))


def ground_term(term, theta: dict):
    if isinstance(term, Obj):
        return term.name
    if isinstance(term, Var):
        return theta[term.name]
    if isinstance(term, Act):
        return (term.name, tuple(ground_term(a, theta) for a in term.args))
    raise ValidationError(f"cannot ground term {term}")


def ground_atom(atom: Atom, theta: dict) -> GAtom:
    t = atom.time
    time = t.offset if t.var is None else theta[t.var] + t.offset
    return GAtom(atom.pred, tuple(ground_term(a, theta) for a in atom.args), time)


def ground_formula(formula: Formula, theta: dict):
    """Instantiate a body; inequality guards fold to true/false constants."""
    if isinstance(formula, Verum):
        return GF_TRUE
    if isinstance(formula, Falsum):
        return GF_FALSE
    if isinstance(formula, AtomF):
        return ("atom", ground_atom(formula.atom, theta))
    if isinstance(formula, Neq):
        left = ground_term(formula.left, theta)
        right = ground_term(formula.right, theta)
        return GF_TRUE if left != right else GF_FALSE
    if isinstance(formula, Not):
        sub = ground_formula(formula.sub, theta)
        if sub == GF_TRUE:
            return GF_FALSE
        if sub == GF_FALSE:
            return GF_TRUE
        return ("not", sub)
    if isinstance(formula, And):
        left = ground_formula(formula.left, theta)
        right = ground_formula(formula.right, theta)
        if left == GF_FALSE or right == GF_FALSE:
            return GF_FALSE
        if left == GF_TRUE:
            return right
        if right == GF_TRUE:
            return left
        return ("and", left, right)
    raise ValidationError(f"cannot ground formula {formula}")


def max_time(gf) -> int:
    return max((a.time for a in gf_atoms(gf)), default=0)


# ---------------------------------------------------------------------------
# Ground programs
# ---------------------------------------------------------------------------

class GroundProgram:
    """Finite ground clauses over a horizon-bounded Herbrand base."""

    def __init__(self, clauses: list, base: list[GAtom], horizon: int):
        self.clauses = tuple(clauses)
        self.herbrand_base = tuple(base)
        self.base_set = frozenset(base)
        self.horizon = horizon
        self.by_head: dict[GAtom, list] = {}
        for head, body in self.clauses:
            self.by_head.setdefault(head, []).append(body)
        self._kappa: Optional[dict] = None

    def dependency_edges(self) -> Iterator[tuple[GAtom, GAtom]]:
        for head, body in self.clauses:
            for atom in gf_atoms(body):
                yield atom, head

    def kappa(self) -> dict:
        """The cached level map; raises on cyclic programs."""
        if self._kappa is None:
            kappa, cycle = check_acyclic(self)
            if cycle is not None:
                raise ValidationError(
                    "cyclic ground program: " +
                    " -> ".join(render_atom(a) for a in cycle))
            self._kappa = kappa
        return self._kappa


def ground_theory(theory: IclTheory,
                  max_atoms: int = DEFAULT_MAX_ATOMS) -> GroundProgram:
    """All well-sorted instances whose times fall within the horizon."""
    vocab = theory.vocabulary
    universe = HerbrandUniverse(vocab, theory.horizon)
    base = herbrand_base(vocab, universe, max_atoms)
    base_set = set(base)
    clauses = []
    for clause in theory.program:
        constraints = clause_var_constraints(vocab, clause)
        for theta in enumerate_substitutions(constraints, universe):
            head = ground_atom(clause.head, theta)
            if head.time > theory.horizon:
                continue
            body = ground_formula(clause.body, theta)
            if body == GF_FALSE:
                continue
            if max_time(body) > theory.horizon:
                continue
            if head not in base_set:
                raise ValidationError(
                    f"ground head {render_atom(head)} outside the Herbrand base")
            clauses.append((head, body))
    program = GroundProgram(clauses, base, theory.horizon)
    for atom in theory.choice_atoms:
        g = freeze_atom(atom)
        if g not in program.base_set:
            raise ValidationError(
                f"atomic choice {render_atom(g)} outside the Herbrand base")
        if g in program.by_head:
            raise ValidationError(
                f"atomic choice {render_atom(g)} coincides with a clause head")
    return program


def check_acyclic(program: GroundProgram):
    """Level map satisfying head > body per clause, or a cycle witness.

    Returns (kappa, None) when acyclic and (None, cycle) otherwise; atoms
    outside every clause sit at level 0.
    """
    succ: dict[GAtom, list[GAtom]] = {}
    indeg: dict[GAtom, int] = {a: 0 for a in program.herbrand_base}
    for body_atom, head in program.dependency_edges():
        succ.setdefault(body_atom, []).append(head)
        indeg[head] = indeg.get(head, 0) + 1
    kappa = {a: 0 for a in program.herbrand_base}
    queue = [a for a in program.herbrand_base if indeg[a] == 0]
    seen = 0
    while queue:
        atom = queue.pop()
        seen += 1
        for nxt in succ.get(atom, ()):  # head level exceeds every body level
            if kappa[nxt] < kappa[atom] + 1:
                kappa[nxt] = kappa[atom] + 1
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if seen == len(indeg):
        return kappa, None
    remaining = {a for a, d in indeg.items() if d > 0}
    pred: dict[GAtom, list[GAtom]] = {}
    for body_atom, head in program.dependency_edges():
        if body_atom in remaining and head in remaining:
            pred.setdefault(head, []).append(body_atom)
    cycle = _find_cycle(remaining, pred)
    return None, cycle


def _find_cycle(remaining: set, pred: dict) -> list[GAtom]:
    # Every leftover atom keeps at least one leftover predecessor, so a
    # backward walk must revisit an atom; reversing yields a forward cycle.
    start = min(remaining, key=lambda a: (a.time, a.pred, repr(a.args)))
    path: list[GAtom] = []
    index: dict[GAtom, int] = {}
    atom = start
    while atom not in index:
        index[atom] = len(path)
        path.append(atom)
        atom = pred[atom][0]
    cycle = path[index[atom]:]
    cycle.reverse()
    return cycle


def answer_set(program: GroundProgram, total_choice: frozenset) -> frozenset:
    """The unique answer set of the program extended with the choice facts.

    Atoms are decided in level order: an atom holds iff it was chosen or
    some clause with that head has a true body; everything else is false.
    """
    kappa = program.kappa()
    order = sorted(program.herbrand_base,
                   key=lambda a: (kappa[a], a.time, a.pred, repr(a.args)))
    world: set[GAtom] = set()
    truth = world.__contains__
    for atom in order:
        if atom in total_choice:
            world.add(atom)
            continue
        for body in program.by_head.get(atom, ()):
            if gf_eval(body, truth):
                world.add(atom)
                break
    return frozenset(world)


def world_satisfies(world: frozenset, gf) -> bool:
    """Structural truth of a ground formula in a world."""
    return gf_eval(gf, world.__contains__)


def render_ground_program(program: GroundProgram) -> str:
    """Debug dump of the ground clauses in theory syntax."""
    lines = []
    for head, body in program.clauses:
        if body == GF_TRUE:
            lines.append(f"{render_atom(head)}.")
        else:
            lines.append(f"{render_atom(head)} <= {render_gf(body)}.")
    return "\n".join(lines) + ("\n" if lines else "")
