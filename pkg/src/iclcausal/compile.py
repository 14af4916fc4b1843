"""Translations between choice theories and causal models.

Forward: each alternative of the choice space becomes an exogenous
variable whose domain is its set of atomic choices (named by their
canonical rendering); every other Herbrand-base atom becomes a boolean
endogenous variable whose mechanism fires iff some ground clause body
with that head is true.  Backward: a binary probabilistic model becomes
a theory with one alternative per exogenous variable and clause bodies
recovered from the mechanism tables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Optional, Union

from . import lang
from .ground import (
    DEFAULT_MAX_ATOMS, GAtom, GroundProgram, freeze_atom, gf_atoms,
    gf_eval, ground_theory, render_atom,
)
from .lang import Atom, Clause, IclTheory, Time, ValidationError, Vocabulary
from .scm import (
    TABLE_CAP, CausalModel, Distribution, Mechanism, ProbCausalModel, submodel,
)

FIXED = "fixed"
OVERRIDABLE = "overridable"


def compile_picl(theory: IclTheory, max_atoms: int = DEFAULT_MAX_ATOMS,
                 table_cap: int = TABLE_CAP,
                 program: Optional[GroundProgram] = None
                 ) -> Union[CausalModel, ProbCausalModel]:
    """The causal model of a theory; probabilistic iff the theory is."""
    if program is None:
        program = ground_theory(theory, max_atoms)
    program.kappa()  # rejects cyclic ground programs
    alternatives = [tuple(freeze_atom(a) for a in alt)
                    for alt in theory.choice_space]
    choice_var: dict[GAtom, str] = {}
    exo = []
    for i, alt in enumerate(alternatives):
        name = f"U{i}"
        exo.append((name, tuple(render_atom(a) for a in alt)))
        for atom in alt:
            choice_var[atom] = name
    choice_atoms = set(choice_var)
    endo_atoms = [a for a in program.herbrand_base if a not in choice_atoms]
    endo = [(render_atom(a), (False, True)) for a in endo_atoms]
    domains = dict(exo + endo)

    mechanisms: dict[str, Mechanism] = {}
    for atom in endo_atoms:
        name = render_atom(atom)
        bodies = program.by_head.get(atom, ())
        if not bodies:
            mechanisms[name] = Mechanism.constant(False)
            continue
        parent_atoms: list[GAtom] = []
        seen = set()
        for body in bodies:
            for q in gf_atoms(body):
                key = choice_var.get(q, q)
                if key not in seen:
                    seen.add(key)
                    parent_atoms.append(q)
        parents = tuple(choice_var.get(q, render_atom(q)) for q in parent_atoms)
        fn = _mechanism_fn(parents, bodies, choice_var)
        rows = 1
        for p in parents:
            rows *= len(domains[p])
        if rows <= table_cap:
            pools = [domains[p] for p in parents]
            table = {row: fn(row) for row in product(*pools)}
            mechanisms[name] = Mechanism(parents, table=table, fn=fn)
        else:
            mechanisms[name] = Mechanism(parents, fn=fn)

    model = CausalModel(exo, endo, mechanisms)
    if theory.probabilities is None:
        return model
    factors = {}
    for i, alt in enumerate(alternatives):
        factors[f"U{i}"] = {
            render_atom(a): theory.probabilities[thawed]
            for a, thawed in zip(alt, theory.choice_space[i])}
    return ProbCausalModel(model, Distribution(factors=factors))


def _mechanism_fn(parents: tuple, bodies, choice_var: dict):
    """v |= some body, reading atomic choices off their alternative's value."""
    index = {p: i for i, p in enumerate(parents)}

    def fn(row: tuple) -> bool:
        def truth(q: GAtom) -> bool:
            var = choice_var.get(q)
            if var is not None:
                return row[index[var]] == render_atom(q)
            return row[index[render_atom(q)]]

        return any(gf_eval(body, truth) for body in bodies)

    return fn


def _atom_names(atoms) -> list[str]:
    names = []
    for a in atoms:
        if isinstance(a, Atom):
            a = freeze_atom(a)
        if isinstance(a, GAtom):
            names.append(render_atom(a))
        elif isinstance(a, str):
            names.append(a)
        else:
            raise ValidationError(f"not an atom: {a!r}")
    return names


def context_of_choice(model_or_pm, total_choice) -> dict:
    """The context selecting each alternative's atomic choice in B."""
    model = model_or_pm.model if isinstance(model_or_pm, ProbCausalModel) \
        else model_or_pm
    names = set(_atom_names(total_choice))
    context = {}
    matched = set()
    for var in model.exogenous:
        hits = [v for v in model.domains[var] if v in names]
        if len(hits) != 1:
            raise ValidationError(
                f"not a total choice: alternative {var} has {len(hits)} "
                f"selected atomic choice(s)")
        context[var] = hits[0]
        matched.add(hits[0])
    stray = names - matched
    if stray:
        raise ValidationError(f"not atomic choices of any alternative: "
                              f"{sorted(stray)}")
    return context


def apply_execution(model_or_pm, executions, mode: str = FIXED):
    """Incorporate executed actions, either fixed or overridable.

    Fixed removes the do-atoms from the endogenous set, hard-set to true.
    Overridable gives them constant-true mechanisms instead, which equals
    recompiling the theory with one fact clause per execution: the added
    facts touch no other clause, so only those mechanisms change.
    """
    pm = model_or_pm if isinstance(model_or_pm, ProbCausalModel) else None
    model = pm.model if pm else model_or_pm
    names = _atom_names(executions)
    endo = set(model.endogenous)
    for name in names:
        if name not in endo:
            raise ValidationError(
                f"executed action {name} is not an endogenous variable "
                f"of the model")
    if mode == FIXED:
        result = submodel(model, {name: True for name in names})
    elif mode == OVERRIDABLE:
        if not names:
            result = model
        else:
            mechanisms = dict(model.mechanisms)
            for name in names:
                mechanisms[name] = Mechanism.constant(True)
            result = CausalModel(
                [(x, model.domains[x]) for x in model.exogenous],
                [(x, model.domains[x]) for x in model.endogenous],
                mechanisms, fixed=model.fixed)
    else:
        raise ValidationError(f"unknown execution mode {mode!r}")
    if pm is not None:
        return ProbCausalModel(result, pm.P)
    return result


# ---------------------------------------------------------------------------
# Reverse compilation
# ---------------------------------------------------------------------------

@dataclass
class ReverseCompilation:
    """A reverse-compiled theory plus the variable-to-atom naming maps."""

    theory: IclTheory
    exo_atoms: dict[str, tuple[Atom, ...]]  # variable -> atom per domain value
    endo_atoms: dict[str, Atom]


def _sanitize(name: str, taken: set) -> str:
    base = re.sub(r"[^A-Za-z0-9_]", "_", name).lower()
    if not base or not base[0].isalpha():
        base = "x" + base
    if base in lang.KEYWORDS or base == "u":
        base = base + "_"
    candidate = base
    counter = 2
    while candidate in taken:
        candidate = f"{base}{counter}"
        counter += 1
    taken.add(candidate)
    return candidate


def reverse_compile(pm: Union[CausalModel, ProbCausalModel]) -> ReverseCompilation:
    """A theory whose answer sets mirror a binary model's evaluations.

    Exogenous assignments become atomic choices u(i<k>, v<j>) indexed by
    variable and domain position; endogenous variables become 0-ary
    fluents at time 0, with one clause per simplified conjunction of
    parent assignments covering exactly the mechanism's true points.
    """
    prob = isinstance(pm, ProbCausalModel)
    model = pm.model if prob else pm
    if model.fixed:
        raise ValidationError("reverse compilation expects an unintervened model")
    for x in model.endogenous:
        if set(model.domains[x]) != {0, 1}:
            raise ValidationError(
                f"reverse compilation needs binary domains {{0, 1}}; "
                f"{x} has {list(model.domains[x])}")

    slot_consts = tuple(f"i{i}" for i in range(len(model.exogenous)))
    max_values = max((len(model.domains[x]) for x in model.exogenous), default=0)
    level_consts = tuple(f"v{j}" for j in range(max_values))
    vocab = Vocabulary()
    if model.exogenous:
        vocab.sorts["slot"] = slot_consts
        vocab.sorts["level"] = level_consts
        vocab.fluents["u"] = ("slot", "level")

    exo_atoms: dict[str, tuple[Atom, ...]] = {}
    alternatives = []
    for i, name in enumerate(model.exogenous):
        atoms = tuple(
            Atom("u", (lang.Obj(f"i{i}"), lang.Obj(f"v{j}")), Time(None, 0))
            for j in range(len(model.domains[name])))
        exo_atoms[name] = atoms
        alternatives.append(atoms)

    taken: set = set()
    endo_atoms: dict[str, Atom] = {}
    for x in model.endogenous:
        pred = _sanitize(x, taken)
        vocab.fluents[pred] = ()
        endo_atoms[x] = Atom(pred, (), Time(None, 0))

    def literal(parent: str, value) -> lang.Formula:
        if parent in exo_atoms:
            j = model.domains[parent].index(value)
            return lang.AtomF(exo_atoms[parent][j])
        base = lang.AtomF(endo_atoms[parent])
        return base if value == 1 else lang.Not(base)

    clauses: list[Clause] = []
    for x in model.endogenous:
        mech = model.mechanisms[x].materialized(model.domains)
        table = mech.table
        conjunctions = _simplified_dnf(mech.parents, table,
                                       [model.domains[p] for p in mech.parents])
        for conj in conjunctions:
            body: Optional[lang.Formula] = None
            for parent in mech.parents:
                if parent in conj:
                    lit = literal(parent, conj[parent])
                    body = lit if body is None else lang.And(body, lit)
            clauses.append(Clause(endo_atoms[x], body or lang.Verum()))

    probabilities = None
    if prob:
        factors = pm.P.factorized(model)
        probabilities = {}
        for name in model.exogenous:
            for j, value in enumerate(model.domains[name]):
                probabilities[exo_atoms[name][j]] = factors[name][value]

    theory = IclTheory(
        vocabulary=vocab,
        program=tuple(clauses),
        choice_space=tuple(alternatives),
        probabilities=probabilities,
        executions=(),
        horizon=0,
    )
    lang.validate_theory(theory)
    return ReverseCompilation(theory, exo_atoms, endo_atoms)


def _simplified_dnf(parents: tuple, table: dict, pools: list) -> list[dict]:
    """Conjunctions of parent assignments covering exactly the true rows.

    Starts from the true-point minterms, greedily drops literals whose
    removal keeps every matching row a true point, then removes duplicate
    and subsumed conjunctions.  The covered set never changes: dropping is
    only allowed when the enlarged cone stays inside the true points, and
    every original true point stays covered by its own minterm.
    """
    rows = list(product(*pools))
    true_rows = [row for row in rows if table[row]]
    index = {p: i for i, p in enumerate(parents)}

    def cone_is_true(conj: dict) -> bool:
        for row in rows:
            if all(row[index[p]] == v for p, v in conj.items()):
                if not table[row]:
                    return False
        return True

    reduced: list[dict] = []
    for row in true_rows:
        conj = dict(zip(parents, row))
        for parent in parents:
            value = conj.pop(parent)
            if not cone_is_true(conj):
                conj[parent] = value
        reduced.append(conj)

    kept: list[dict] = []
    for conj in reduced:
        items = set(conj.items())
        if any(set(other.items()) <= items for other in kept):
            continue
        kept = [other for other in kept if not items <= set(other.items())]
        kept.append(conj)
    return kept
