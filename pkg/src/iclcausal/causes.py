"""Weak and actual causes, on causal models and on theories.

The model-level checks follow the three-condition definition: actuality,
counterfactual dependence under a contingency (W, w) with the alternate
value set, and subset minimality for actual causes.  The search is
deterministic: contingency sets grow by size, candidates and values are
tried in canonical order, and the first witness wins.

A verdict is tri-valued.  Budget exhaustion yields holds=None, never a
bare False: a False verdict is only reported once the search space was
covered exhaustively (up to reductions that provably preserve the
answer).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Optional, Union

from .compile import FIXED, apply_execution, compile_picl, context_of_choice
from .ground import (
    DEFAULT_MAX_ATOMS, GroundProgram, HerbrandUniverse, clause_var_constraints,
    enumerate_substitutions, ground_atom, ground_formula, ground_theory,
    render_atom,
)
from .lang import (
    And, Atom, AtomF, Clause, DomainError, Formula, IclTheory, ValidationError,
)
from .scm import (
    CausalModel, EAnd, EFalse, ENot, ETrue, Event, Prim, ProbCausalModel,
    TABLE_CAP, check_event, evaluate_with, event_vars,
)

DEFAULT_BUDGET = 5_000_000

AC1, AC2, AC3 = "AC1", "AC2", "AC3"


@dataclass
class Witness:
    """The contingency values and the alternate cause value of AC2."""

    w: dict
    x_bar: dict


@dataclass
class CauseVerdict:
    holds: Optional[bool]  # None means unknown (budget exhausted)
    witness: Optional[Witness] = None
    failed_condition: Optional[str] = None
    failing_substitution: Optional[dict] = None

    @property
    def unknown(self) -> bool:
        return self.holds is None


class Budget:
    """A shared countdown over examined candidates and sub-evaluations."""

    __slots__ = ("left",)

    def __init__(self, limit: int):
        self.left = limit

    def spend(self) -> bool:
        self.left -= 1
        return self.left >= 0

    @property
    def exhausted(self) -> bool:
        return self.left < 0


# ---------------------------------------------------------------------------
# Dependency structure
# ---------------------------------------------------------------------------

def live_parent_graph(model: CausalModel, u: dict) -> dict:
    """Endogenous parent edges that can matter under the given context.

    With the exogenous parents pinned to their context values, an edge
    Z -> X is live iff some assignment to the remaining parents reacts to
    changing Z.  Mechanisms too large to enumerate keep all their edges.
    """
    live: dict[str, tuple] = {}
    for x in model.endogenous:
        mech = model.mechanisms[x]
        endo_parents = [p for p in mech.parents if p in model.mechanisms]
        if not endo_parents:
            live[x] = ()
            continue
        pools = []
        rows = 1
        for p in mech.parents:
            pool = (u[p],) if p not in model.mechanisms else model.domains[p]
            pools.append(pool)
            rows *= len(pool)
        if rows > TABLE_CAP:
            live[x] = tuple(endo_parents)
            continue
        alive = []
        for i, p in enumerate(mech.parents):
            if p not in model.mechanisms:
                continue
            found = False
            for row in product(*pools):
                out = mech.value(row)
                for alt in model.domains[p]:
                    if alt == row[i]:
                        continue
                    changed = list(row)
                    changed[i] = alt
                    if mech.value(tuple(changed)) != out:
                        found = True
                        break
                if found:
                    break
            if found:
                alive.append(p)
        live[x] = tuple(alive)
    return live


def _reach_up(graph: dict, seeds) -> set:
    """Reflexive ancestors of the seeds along the given parent edges."""
    out = set(s for s in seeds if s in graph)
    stack = list(out)
    while stack:
        x = stack.pop()
        for p in graph.get(x, ()):
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def _reach_down(graph: dict, seeds) -> set:
    children: dict[str, list] = {}
    for x, parents in graph.items():
        for p in parents:
            children.setdefault(p, []).append(x)
    out: set = set()
    stack = list(seeds)
    while stack:
        x = stack.pop()
        for c in children.get(x, ()):
            if c not in out:
                out.add(c)
                stack.append(c)
    return out


# ---------------------------------------------------------------------------
# AC2
# ---------------------------------------------------------------------------

def _check_ac2b(model: CausalModel, u: dict, clamps_xw: dict, event: Event,
                actual: dict, candidates: list, budget: Budget) -> Optional[bool]:
    """Condition (b): the event survives restoring any candidate subset to
    its actual values on top of the x, w intervention."""
    for size in range(len(candidates) + 1):
        for subset in combinations(candidates, size):
            if not budget.spend():
                return None
            clamps = dict(clamps_xw)
            for z in subset:
                clamps[z] = actual[z]
            if not event_truth_with(model, u, event, clamps):
                return False
    return True


def event_truth_with(model: CausalModel, u: dict, event: Event,
                     clamps: dict) -> bool:
    values = evaluate_with(model, u, clamps)
    return _eval_event(event, values)


def _eval_event(event: Event, values: dict) -> bool:
    if isinstance(event, Prim):
        return values[event.var] == event.value
    if isinstance(event, ENot):
        return not _eval_event(event.sub, values)
    if isinstance(event, EAnd):
        return _eval_event(event.left, values) and _eval_event(event.right, values)
    return isinstance(event, ETrue)


def _ac2b_candidates(model: CausalModel, live: Optional[dict], w_vars: tuple,
                     xw: set, phi_vars: set) -> list:
    """Variables whose restoration can change the event, given W = w.

    Restorations outside the contingency's descendants are no-ops (all
    deviation originates at W), and restorations outside the reflexive
    ancestors of the event's variables cannot reach it; both facts hold
    for every subset, so restricting the subsets preserves the verdict.
    """
    graph = live if live is not None else {
        x: tuple(p for p in model.mechanisms[x].parents if p in model.mechanisms)
        for x in model.endogenous}
    relevant = _reach_up(graph, phi_vars)
    reachable = _reach_down(graph, w_vars)
    return [z for z in model.endogenous
            if z in reachable and z in relevant and z not in xw]


def is_weak_cause(model: CausalModel, u: dict, assignment: dict, event: Event,
                  *, budget: Union[int, Budget] = DEFAULT_BUDGET,
                  prune: bool = True) -> CauseVerdict:
    """Actuality plus contingent counterfactual dependence.

    With prune=True the contingency search runs over the reflexive live
    ancestors of the event's variables and condition (b) uses the
    verdict-preserving reductions; prune=False searches every subset of
    the endogenous variables (minus the cause) instead.
    """
    model.check_context(u)
    check_event(model, event)
    for x, value in assignment.items():
        if x not in model.mechanisms:
            raise DomainError(f"cause variable {x} is not endogenous")
        if value not in model.domains[x]:
            raise ValidationError(f"value {value!r} outside D({x})")
    if not isinstance(budget, Budget):
        budget = Budget(budget)

    actual = evaluate_with(model, u, {})
    if any(actual[x] != v for x, v in assignment.items()) \
            or not _eval_event(event, actual):
        return CauseVerdict(holds=False, failed_condition=AC1)
    if not assignment:
        # The empty conjunction admits no alternate value, so (a) and (b)
        # can never hold together.
        return CauseVerdict(holds=False, failed_condition=AC2)

    xvars = list(assignment)
    xset = set(xvars)
    phi_vars = {v for v in event_vars(event) if v in model.mechanisms}

    live = live_parent_graph(model, u) if prune else None
    if prune:
        relevant = _reach_up(live, phi_vars)
        if not (xset & relevant):
            # No live path from the cause into the event: interventions on
            # X can never move the event, so (a) and (b) cannot both hold.
            return CauseVerdict(holds=False, failed_condition=AC2)
        candidates = [z for z in model.endogenous
                      if z in relevant and z not in xset]
    else:
        candidates = [z for z in model.endogenous if z not in xset]

    x_bar_pool = [alt for alt in product(*(model.domains[x] for x in xvars))
                  if dict(zip(xvars, alt)) != assignment]

    incomplete = False
    for size in range(len(candidates) + 1):
        for wvars in combinations(candidates, size):
            for wvals in product(*(model.domains[w] for w in wvars)):
                if not budget.spend():
                    return CauseVerdict(holds=None)
                wmap = dict(zip(wvars, wvals))
                # (a): some alternate value makes the event fail under w.
                passing_alt = None
                for alt in x_bar_pool:
                    clamps = dict(wmap)
                    clamps.update(zip(xvars, alt))
                    if not event_truth_with(model, u, event, clamps):
                        passing_alt = alt
                        break
                if passing_alt is None:
                    continue
                # (b) does not involve the alternate value, so one check
                # settles this contingency for every alternate.
                clamps_xw = dict(wmap)
                clamps_xw.update(assignment)
                values_xw = evaluate_with(model, u, clamps_xw)
                if not _eval_event(event, values_xw):
                    continue  # fails already on the empty restoration
                deviating = any(values_xw[z] != actual[z]
                                for z in model.endogenous
                                if z not in xset and z not in wmap)
                if not deviating:
                    ok: Optional[bool] = True  # restorations are all no-ops
                else:
                    cand_b = _ac2b_candidates(
                        model, live, wvars, xset | set(wvars), phi_vars)
                    ok = _check_ac2b(model, u, clamps_xw, event, actual,
                                     cand_b, budget)
                if ok is None:
                    incomplete = True
                elif ok:
                    witness = Witness(w=wmap,
                                      x_bar=dict(zip(xvars, passing_alt)))
                    return CauseVerdict(holds=True, witness=witness)
    if incomplete or budget.exhausted:
        return CauseVerdict(holds=None)
    return CauseVerdict(holds=False, failed_condition=AC2)


def is_actual_cause(model: CausalModel, u: dict, assignment: dict,
                    event: Event, *, budget: Union[int, Budget] = DEFAULT_BUDGET,
                    prune: bool = True) -> CauseVerdict:
    """A weak cause none of whose proper subsets is already a weak cause."""
    if not isinstance(budget, Budget):
        budget = Budget(budget)
    verdict = is_weak_cause(model, u, assignment, event,
                            budget=budget, prune=prune)
    if verdict.holds is not True:
        return verdict
    xvars = list(assignment)
    unknown = False
    for size in range(1, len(xvars)):
        for sub in combinations(xvars, size):
            part = {x: assignment[x] for x in sub}
            inner = is_weak_cause(model, u, part, event,
                                  budget=budget, prune=prune)
            if inner.holds is True:
                return CauseVerdict(holds=False, failed_condition=AC3)
            if inner.holds is None:
                unknown = True
    if unknown:
        return CauseVerdict(holds=None)
    return verdict


def verify_witness(model: CausalModel, u: dict, assignment: dict,
                   event: Event, witness: Witness, *, full: bool = False) -> bool:
    """Re-check AC2 (a) and (b) for a claimed witness from scratch.

    With full=True condition (b) enumerates every subset of the remaining
    variables; otherwise it uses the verdict-preserving reductions, which
    keeps verification feasible on large models.
    """
    actual = evaluate_with(model, u, {})
    clamps_a = dict(witness.w)
    clamps_a.update(witness.x_bar)
    if event_truth_with(model, u, event, clamps_a):
        return False  # (a) requires the event to fail under x_bar, w
    clamps_xw = dict(witness.w)
    clamps_xw.update(assignment)
    xw = set(assignment) | set(witness.w)
    if full:
        candidates = [z for z in model.endogenous if z not in xw]
    else:
        phi_vars = {v for v in event_vars(event) if v in model.mechanisms}
        live = live_parent_graph(model, u)
        candidates = _ac2b_candidates(model, live, tuple(witness.w), xw, phi_vars)
    result = _check_ac2b(model, u, clamps_xw, event, actual, candidates,
                         Budget(DEFAULT_BUDGET))
    return result is True


def brute_force_weak_cause(model: CausalModel, u: dict, assignment: dict,
                           event: Event) -> CauseVerdict:
    """Reference implementation: exhaustive search with no reductions.

    Exponential in the number of endogenous variables; intended for small
    models and cross-checking the engine.
    """
    model.check_context(u)
    actual = evaluate_with(model, u, {})
    if any(actual[x] != v for x, v in assignment.items()) \
            or not _eval_event(event, actual):
        return CauseVerdict(holds=False, failed_condition=AC1)
    if not assignment:
        return CauseVerdict(holds=False, failed_condition=AC2)
    xvars = list(assignment)
    rest = [z for z in model.endogenous if z not in assignment]
    for size in range(len(rest) + 1):
        for wvars in combinations(rest, size):
            for wvals in product(*(model.domains[w] for w in wvars)):
                wmap = dict(zip(wvars, wvals))
                for alt in product(*(model.domains[x] for x in xvars)):
                    clamps = dict(wmap)
                    clamps.update(zip(xvars, alt))
                    if event_truth_with(model, u, event, clamps):
                        continue
                    ok = True
                    others = [z for z in rest if z not in wmap]
                    for k in range(len(others) + 1):
                        for subset in combinations(others, k):
                            clamps_b = dict(wmap)
                            clamps_b.update(assignment)
                            for z in subset:
                                clamps_b[z] = actual[z]
                            if not event_truth_with(model, u, event, clamps_b):
                                ok = False
                                break
                        if not ok:
                            break
                    if ok:
                        return CauseVerdict(
                            holds=True,
                            witness=Witness(w=wmap, x_bar=dict(zip(xvars, alt))))
    return CauseVerdict(holds=False, failed_condition=AC2)


def brute_force_actual_cause(model: CausalModel, u: dict, assignment: dict,
                             event: Event) -> CauseVerdict:
    verdict = brute_force_weak_cause(model, u, assignment, event)
    if verdict.holds is not True:
        return verdict
    xvars = list(assignment)
    for size in range(1, len(xvars)):
        for sub in combinations(xvars, size):
            part = {x: assignment[x] for x in sub}
            if brute_force_weak_cause(model, u, part, event).holds:
                return CauseVerdict(holds=False, failed_condition=AC3)
    return verdict


# ---------------------------------------------------------------------------
# Theory-level wrappers
# ---------------------------------------------------------------------------

@dataclass
class PreparedTheory:
    """A theory compiled once, with its executions applied."""

    theory: IclTheory
    program: GroundProgram
    universe: HerbrandUniverse
    base_model: Union[CausalModel, ProbCausalModel]
    model: Union[CausalModel, ProbCausalModel]  # after executions
    executions: tuple[Atom, ...]
    exec_mode: str

    @property
    def causal_model(self) -> CausalModel:
        m = self.model
        return m.model if isinstance(m, ProbCausalModel) else m


def merged_executions(theory: IclTheory, extra=()) -> tuple[Atom, ...]:
    """Theory-level executions plus query-level ones, first occurrence wins."""
    merged: list[Atom] = []
    for atom in tuple(theory.executions) + tuple(extra):
        if atom not in merged:
            merged.append(atom)
    return tuple(merged)


def prepare_theory(theory: IclTheory, executions=(), exec_mode: str = FIXED,
                   *, horizon: Optional[int] = None,
                   max_atoms: int = DEFAULT_MAX_ATOMS,
                   table_cap: int = TABLE_CAP) -> PreparedTheory:
    if horizon is not None:
        theory = theory.with_horizon(horizon)
    executions = tuple(executions)
    for atom in executions:
        if atom.pred != "do" or not atom.is_ground():
            raise ValidationError(f"execution {atom} is not a ground do atom")
        if atom.time.offset > theory.horizon:
            raise DomainError(f"execution {atom} beyond horizon {theory.horizon}")
    program = ground_theory(theory, max_atoms)
    base_model = compile_picl(theory, max_atoms, table_cap, program=program)
    model = apply_execution(base_model, executions, exec_mode)
    universe = HerbrandUniverse(theory.vocabulary, theory.horizon)
    return PreparedTheory(theory, program, universe, base_model, model,
                          executions, exec_mode)


def query_var_constraints(theory: IclTheory, psi: tuple, phi: Formula) -> dict:
    """Sort constraints for the free variables of a query.

    psi's atoms and phi share one variable scope, so they are walked as a
    single throwaway clause.
    """
    if not psi:
        raise ValidationError("psi must contain at least one atom")
    body = phi
    for atom in psi[1:]:
        body = And(body, AtomF(atom))
    return clause_var_constraints(theory.vocabulary, Clause(psi[0], body))


def event_of(gf) -> Event:
    """The event of a ground formula: every atom p becomes p = true."""
    tag = gf[0]
    if tag == "true":
        return ETrue()
    if tag == "false":
        return EFalse()
    if tag == "atom":
        return Prim(render_atom(gf[1]), True)
    if tag == "not":
        return ENot(event_of(gf[1]))
    return EAnd(event_of(gf[1]), event_of(gf[2]))


def _check_in_model(model: CausalModel, names, what: str) -> None:
    for name in names:
        if name not in model.mechanisms and name not in model.fixed:
            raise DomainError(
                f"{what} atom {name} is not an endogenous variable of the "
                f"model (an atomic choice, or outside the Herbrand base)")


def icl_cause(prepared: Union[PreparedTheory, IclTheory], psi: tuple,
              phi: Formula, total_choice, executions=(), mode: str = "actual",
              exec_mode: str = FIXED, *, horizon: Optional[int] = None,
              budget: int = DEFAULT_BUDGET, prune: bool = True,
              max_atoms: int = DEFAULT_MAX_ATOMS) -> CauseVerdict:
    """psi as a cause of phi under a total choice and executions.

    Holds iff for every well-sorted ground instantiation of the free
    variables, the instantiated cause event is a weak (resp. actual)
    cause of the instantiated effect event in the execution-adjusted
    model under the choice's context.
    """
    if isinstance(prepared, IclTheory):
        prepared = prepare_theory(prepared, executions, exec_mode,
                                  horizon=horizon, max_atoms=max_atoms)
    model = prepared.causal_model
    u = context_of_choice(prepared.model, total_choice)
    theory = prepared.theory
    constraints = query_var_constraints(theory, psi, phi)
    shared_budget = Budget(budget)
    check = is_actual_cause if mode == "actual" else is_weak_cause
    first: Optional[CauseVerdict] = None
    unknown = False
    for theta in enumerate_substitutions(constraints, prepared.universe):
        psi_g = [ground_atom(a, theta) for a in psi]
        if any(a.time > theory.horizon for a in psi_g):
            raise DomainError("psi instantiates beyond the horizon")
        phi_g = ground_formula(phi, theta)
        names = [render_atom(a) for a in psi_g]
        _check_in_model(model, names, "cause")
        if any(name in model.fixed for name in names):
            raise DomainError(
                "cause atoms fixed by the execution set cannot be intervened on")
        assignment = {name: True for name in names}
        event = event_of(phi_g)
        check_event(model, event)
        verdict = check(model, u, assignment, event,
                        budget=shared_budget, prune=prune)
        if verdict.holds is False:
            verdict.failing_substitution = _show_theta(theta)
            return verdict
        if verdict.holds is None:
            unknown = True
        elif first is None:
            first = verdict
    if unknown:
        return CauseVerdict(holds=None)
    if first is None:
        raise ValidationError("no ground instantiation of the query exists")
    return first


def _show_theta(theta: dict) -> dict:
    """Substitution values rendered for reports (constants, actions, times)."""
    from .ground import render_ground_term
    out = {}
    for name, value in theta.items():
        out[name] = str(value) if isinstance(value, int) \
            else render_ground_term(value)
    return out
