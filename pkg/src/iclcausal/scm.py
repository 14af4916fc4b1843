"""Finite structural causal models.

A model holds exogenous and endogenous variables with finite ordered
domains, and one mechanism per endogenous variable.  Mechanisms carry an
explicit table, an evaluable function, or both.  Interventions move
variables out of the endogenous set into a `fixed` map; events over
intervened variables evaluate to the intervened value.

Probabilities are exact rationals throughout; a distribution over the
exogenous variables is either a product of per-variable factors or an
explicit joint table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Callable, Iterator, Optional, Union

from .lang import DomainError, IclError, ValidationError

TABLE_CAP = 4096  # parent-assignment count at or below which tables are built

PROB_TOLERANCE = Fraction(1, 10**9)  # applies at parse/load boundaries only


class Mechanism:
    """A total mapping from parent values to a value."""

    __slots__ = ("parents", "table", "fn")

    def __init__(self, parents, table=None, fn=None):
        if table is None and fn is None:
            raise ValidationError("mechanism needs a table or a function")
        self.parents = tuple(parents)
        self.table = table
        self.fn = fn

    @staticmethod
    def constant(value) -> "Mechanism":
        return Mechanism((), table={(): value})

    def value(self, parent_values: tuple):
        if self.table is not None:
            return self.table[parent_values]
        return self.fn(parent_values)

    def bind(self, positions: dict) -> "Mechanism":
        """Fix the parent slots named in positions (index -> value)."""
        keep = [i for i in range(len(self.parents)) if i not in positions]
        parents = tuple(self.parents[i] for i in keep)
        if self.table is not None:
            table = {}
            for row, out in self.table.items():
                if all(row[i] == v for i, v in positions.items()):
                    table[tuple(row[i] for i in keep)] = out
            return Mechanism(parents, table=table)
        base = self.fn
        n = len(self.parents)

        def bound(values, _keep=tuple(keep), _pos=dict(positions), _n=n):
            full = [None] * _n
            for i, v in _pos.items():
                full[i] = v
            for j, i in enumerate(_keep):
                full[i] = values[j]
            return base(tuple(full))

        return Mechanism(parents, fn=bound)

    def materialized(self, domains: dict) -> "Mechanism":
        """A table-backed copy, enumerating the parent domains if needed."""
        if self.table is not None:
            return self
        pools = [domains[p] for p in self.parents]
        table = {row: self.fn(row) for row in product(*pools)}
        return Mechanism(self.parents, table=table, fn=self.fn)


class CausalModel:
    """A recursive causal model (U, V, F) with finite domains."""

    def __init__(self, exogenous, endogenous, mechanisms, fixed=None):
        """exogenous/endogenous: [(name, domain)]; mechanisms: name -> Mechanism."""
        self.exogenous = tuple(name for name, _ in exogenous)
        self.endogenous = tuple(name for name, _ in endogenous)
        self.domains: dict[str, tuple] = {}
        for name, domain in list(exogenous) + list(endogenous):
            if name in self.domains:
                raise ValidationError(f"duplicate variable {name}")
            if not domain:
                raise ValidationError(f"variable {name} has an empty domain")
            self.domains[name] = tuple(domain)
        self.mechanisms: dict[str, Mechanism] = dict(mechanisms)
        self.fixed: dict = dict(fixed or {})
        self._validate()
        order, cycle = check_recursive(self)
        if cycle is not None:
            raise ValidationError("model is not recursive: " + " -> ".join(cycle))
        self.order: tuple[str, ...] = tuple(order)
        self._plan = [(x, self.mechanisms[x], self.mechanisms[x].parents)
                      for x in self.order]

    def _validate(self) -> None:
        known = set(self.exogenous) | set(self.endogenous)
        if set(self.mechanisms) != set(self.endogenous):
            raise ValidationError("mechanisms must cover exactly the endogenous set")
        for x in self.endogenous:
            for p in self.mechanisms[x].parents:
                if p == x:
                    raise ValidationError(f"{x} cannot be its own parent")
                if p not in known:
                    raise ValidationError(f"unknown parent {p} of {x}")
        for x, value in self.fixed.items():
            if x in known:
                raise ValidationError(f"fixed variable {x} still present in model")

    def parents_of(self, x: str) -> tuple[str, ...]:
        return self.mechanisms[x].parents

    def is_binary(self) -> bool:
        return all(len(self.domains[x]) == 2 for x in self.endogenous)

    def contexts(self) -> Iterator[dict]:
        """All exogenous assignments in canonical order."""
        pools = [self.domains[u] for u in self.exogenous]
        for combo in product(*pools):
            yield dict(zip(self.exogenous, combo))

    def check_context(self, u: dict) -> None:
        if set(u) != set(self.exogenous):
            raise ValidationError("context must assign every exogenous variable")
        for name, value in u.items():
            if value not in self.domains[name]:
                raise ValidationError(f"context value {value!r} outside D({name})")


def check_recursive(model: CausalModel):
    """Total order with parents before children, or a cycle witness.

    Returns (order, None) when recursive and (None, cycle) otherwise.
    """
    indeg = {x: 0 for x in model.endogenous}
    succ: dict[str, list[str]] = {}
    for x in model.endogenous:
        for p in model.mechanisms[x].parents:
            if p in indeg:
                succ.setdefault(p, []).append(x)
                indeg[x] += 1
    order = []
    queue = [x for x in model.endogenous if indeg[x] == 0]
    while queue:
        x = queue.pop()
        order.append(x)
        for nxt in succ.get(x, ()):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if len(order) == len(model.endogenous):
        depth: dict[str, int] = {}
        for x in order:  # parents precede x here, so depths are ready
            depth[x] = 1 + max((depth[p] for p in model.mechanisms[x].parents
                                if p in depth), default=-1)
        by_rank = {x: i for i, x in enumerate(model.endogenous)}
        order.sort(key=lambda x: (depth[x], by_rank[x]))
        return order, None
    remaining = {x for x, d in indeg.items() if d > 0}
    x = min(remaining)
    path, index = [], {}
    while x not in index:
        index[x] = len(path)
        path.append(x)
        x = next(p for p in model.mechanisms[x].parents if p in remaining)
    cycle = path[index[x]:]
    cycle.reverse()
    return None, cycle


def evaluate(model: CausalModel, u: dict, names=None) -> dict:
    """Values of the endogenous variables (or the named subset) under u."""
    model.check_context(u)
    values = evaluate_with(model, u, {})
    if names is None:
        names = model.endogenous
    return {x: values[x] for x in names}


def evaluate_with(model: CausalModel, u: dict, clamps: dict) -> dict:
    """Mechanism evaluation with some endogenous variables clamped."""
    values: dict = dict(u)
    values.update(model.fixed)
    for x, mech, parents in model._plan:
        c = clamps.get(x, _MISSING)
        if c is not _MISSING:
            values[x] = c
        else:
            values[x] = mech.value(tuple(values[p] for p in parents))
    return values


_MISSING = object()


def submodel(model: CausalModel, assignment: dict) -> CausalModel:
    """The model with the assigned variables removed and hard-set."""
    if not assignment:
        return model
    extra = set(assignment) - set(model.endogenous)
    if extra:
        raise ValidationError(
            f"cannot intervene on non-endogenous variables: {sorted(extra)}")
    for x, value in assignment.items():
        if value not in model.domains[x]:
            raise ValidationError(f"value {value!r} outside D({x})")
    keep = [x for x in model.endogenous if x not in assignment]
    mechanisms = {}
    for x in keep:
        mech = model.mechanisms[x]
        positions = {i: assignment[p] for i, p in enumerate(mech.parents)
                     if p in assignment}
        mechanisms[x] = mech.bind(positions) if positions else mech
    fixed = dict(model.fixed)
    fixed.update(assignment)
    return CausalModel(
        exogenous=[(x, model.domains[x]) for x in model.exogenous],
        endogenous=[(x, model.domains[x]) for x in keep],
        mechanisms=mechanisms,
        fixed=fixed,
    )


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

class Event:
    __slots__ = ()


@dataclass(frozen=True)
class Prim(Event):
    var: str
    value: object

    def __str__(self) -> str:
        return f"{self.var} = {_show(self.value)}"


@dataclass(frozen=True)
class ENot(Event):
    sub: Event

    def __str__(self) -> str:
        return f"~({self.sub})" if isinstance(self.sub, EAnd) else f"~{self.sub}"


@dataclass(frozen=True)
class EAnd(Event):
    left: Event
    right: Event

    def __str__(self) -> str:
        return f"{_paren(self.left)} & {_paren(self.right)}"


@dataclass(frozen=True)
class ETrue(Event):
    def __str__(self) -> str:
        return "true"


@dataclass(frozen=True)
class EFalse(Event):
    def __str__(self) -> str:
        return "false"


def _paren(e: Event) -> str:
    return str(e) if not isinstance(e, EAnd) else f"({e})"


def _show(value) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    return str(value)


def eor(left: Event, right: Event) -> Event:
    return ENot(EAnd(ENot(left), ENot(right)))


def event_vars(event: Event) -> Iterator[str]:
    if isinstance(event, Prim):
        yield event.var
    elif isinstance(event, ENot):
        yield from event_vars(event.sub)
    elif isinstance(event, EAnd):
        yield from event_vars(event.left)
        yield from event_vars(event.right)


def check_event(model: CausalModel, event: Event) -> None:
    for e in _prims(event):
        if e.var in model.fixed:
            continue
        if e.var not in model.mechanisms:
            raise DomainError(f"event mentions non-endogenous variable {e.var}")
        if e.value not in model.domains[e.var]:
            raise ValidationError(f"event value {e.value!r} outside D({e.var})")


def _prims(event: Event) -> Iterator[Prim]:
    if isinstance(event, Prim):
        yield event
    elif isinstance(event, ENot):
        yield from _prims(event.sub)
    elif isinstance(event, EAnd):
        yield from _prims(event.left)
        yield from _prims(event.right)


def _event_eval(event: Event, values: dict) -> bool:
    if isinstance(event, Prim):
        return values[event.var] == event.value
    if isinstance(event, ENot):
        return not _event_eval(event.sub, values)
    if isinstance(event, EAnd):
        return _event_eval(event.left, values) and _event_eval(event.right, values)
    return isinstance(event, ETrue)


def event_truth(model: CausalModel, u: dict, event: Event) -> bool:
    """(M, u) |= event, with intervened variables at their set values."""
    check_event(model, event)
    return event_truth_with(model, u, event, {})


def event_truth_with(model: CausalModel, u: dict, event: Event,
                     clamps: dict) -> bool:
    values = evaluate_with(model, u, clamps)
    return _event_eval(event, values)


# ---------------------------------------------------------------------------
# Parent-graph helpers
# ---------------------------------------------------------------------------

def ancestors(model: CausalModel, seeds) -> set:
    """Endogenous variables with a directed path into the seed set."""
    parents_of: dict[str, list[str]] = {
        x: [p for p in model.mechanisms[x].parents if p in model.mechanisms]
        for x in model.endogenous}
    out: set = set()
    stack = [s for s in seeds if s in parents_of]
    while stack:
        x = stack.pop()
        for p in parents_of[x]:
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def descendants(model: CausalModel, seeds) -> set:
    children: dict[str, list[str]] = {}
    for x in model.endogenous:
        for p in model.mechanisms[x].parents:
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
# Probabilities
# ---------------------------------------------------------------------------

@dataclass
class Distribution:
    """Either per-variable factors or an explicit joint over D(U)."""

    factors: Optional[dict[str, dict]] = None  # name -> {value: Fraction}
    joint: Optional[dict[tuple, Fraction]] = None  # keyed in exo order

    def prob(self, model: CausalModel, u: dict) -> Fraction:
        if self.factors is not None:
            p = Fraction(1)
            for name in model.exogenous:
                p *= self.factors[name][u[name]]
            return p
        key = tuple(u[name] for name in model.exogenous)
        return self.joint.get(key, Fraction(0))

    def validate(self, model: CausalModel) -> None:
        if (self.factors is None) == (self.joint is None):
            raise ValidationError("give exactly one of factors or joint")
        if self.factors is not None:
            if set(self.factors) != set(model.exogenous):
                raise ValidationError("factors must cover the exogenous variables")
            for name, dist in self.factors.items():
                if set(dist) != set(model.domains[name]):
                    raise ValidationError(f"distribution of {name} must cover D({name})")
                if any(p < 0 for p in dist.values()):
                    raise ValidationError(f"negative probability for {name}")
                total = sum(dist.values())
                if abs(total - 1) > PROB_TOLERANCE:
                    raise ValidationError(
                        f"distribution of {name} sums to {total}, not 1")
        else:
            size = 1
            for name in model.exogenous:
                size *= len(model.domains[name])
            if any(p < 0 for p in self.joint.values()):
                raise ValidationError("negative joint probability")
            total = sum(self.joint.values())
            if abs(total - 1) > PROB_TOLERANCE:
                raise ValidationError(f"joint sums to {total}, not 1")

    def factorized(self, model: CausalModel) -> dict[str, dict]:
        """Per-variable marginals, provided the joint is exactly a product."""
        if self.factors is not None:
            return self.factors
        factors: dict[str, dict] = {}
        for i, name in enumerate(model.exogenous):
            dist = {v: Fraction(0) for v in model.domains[name]}
            for key, p in self.joint.items():
                dist[key[i]] += p
            factors[name] = dist
        for u in model.contexts():
            key = tuple(u[name] for name in model.exogenous)
            prod = Fraction(1)
            for name in model.exogenous:
                prod *= factors[name][u[name]]
            if prod != self.joint.get(key, Fraction(0)):
                raise ValidationError(
                    "joint distribution does not factor into independent "
                    "per-variable distributions")
        return factors


@dataclass
class ProbCausalModel:
    model: CausalModel
    P: Distribution

    def __post_init__(self):
        self.P.validate(self.model)

    def prob(self, u: dict) -> Fraction:
        return self.P.prob(self.model, u)


def context_probability(pm: ProbCausalModel,
                        predicate: Callable[[dict], bool]) -> Fraction:
    """Exact probability of the set of contexts satisfying the predicate."""
    total = Fraction(0)
    for u in pm.model.contexts():
        if predicate(u):
            total += pm.prob(u)
    return total


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _fraction_to_json(p: Fraction) -> str:
    return f"{p.numerator}/{p.denominator}" if p.denominator != 1 else str(p.numerator)


def parse_fraction(raw) -> Fraction:
    if isinstance(raw, bool):
        raise ValidationError(f"not a probability: {raw!r}")
    if isinstance(raw, int):
        return Fraction(raw)
    if isinstance(raw, str):
        try:
            return Fraction(raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValidationError(f"bad probability literal {raw!r}") from exc
    if isinstance(raw, float):
        # Floats are re-read through their shortest decimal form so that
        # 0.3 in a JSON file means 3/10, not the nearest binary float.
        return Fraction(repr(raw))
    raise ValidationError(f"bad probability literal {raw!r}")


def _value_to_json(v):
    if isinstance(v, (bool, int, str)):
        return v
    raise ValidationError(f"domain values must be scalars, got {v!r}")


def model_to_json(m: Union[CausalModel, ProbCausalModel]) -> dict:
    pm = m if isinstance(m, ProbCausalModel) else None
    model = pm.model if pm else m
    factors = None
    joint = None
    if pm is not None:
        if pm.P.factors is not None:
            factors = pm.P.factors
        else:
            joint = pm.P.joint
    exo = []
    for name in model.exogenous:
        entry = {"name": name,
                 "domain": [_value_to_json(v) for v in model.domains[name]]}
        if factors is not None:
            entry["distribution"] = [
                _fraction_to_json(factors[name][v]) for v in model.domains[name]]
        exo.append(entry)
    endo = []
    for name in model.endogenous:
        mech = model.mechanisms[name].materialized(model.domains)
        rows = []
        pools = [model.domains[p] for p in mech.parents]
        for row in product(*pools):
            rows.append([[_value_to_json(v) for v in row],
                         _value_to_json(mech.table[row])])
        endo.append({
            "name": name,
            "domain": [_value_to_json(v) for v in model.domains[name]],
            "parents": list(mech.parents),
            "table": rows,
        })
    data: dict = {"exogenous": exo, "endogenous": endo}
    if joint is not None:
        data["joint"] = [[[_value_to_json(v) for v in key], _fraction_to_json(p)]
                         for key, p in sorted(joint.items(), key=lambda kv: repr(kv[0]))]
    if model.fixed:
        data["fixed"] = {k: _value_to_json(v) for k, v in model.fixed.items()}
    return data


def model_from_json(data: dict) -> Union[CausalModel, ProbCausalModel]:
    try:
        exo = [(e["name"], tuple(e["domain"])) for e in data["exogenous"]]
        endo = [(e["name"], tuple(e["domain"])) for e in data["endogenous"]]
        mechanisms = {}
        for e in data["endogenous"]:
            parents = tuple(e["parents"])
            table = {}
            for row, out in e["table"]:
                table[tuple(row)] = out
            mechanisms[e["name"]] = Mechanism(parents, table=table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed model JSON: {exc}") from exc
    model = CausalModel(exo, endo, mechanisms, fixed=data.get("fixed"))
    for e in data["endogenous"]:
        mech = model.mechanisms[e["name"]]
        expected = 1
        for p in mech.parents:
            expected *= len(model.domains[p])
        if len(mech.table) != expected:
            raise ValidationError(f"table of {e['name']} is not total")
    has_factors = any("distribution" in e for e in data["exogenous"])
    has_joint = "joint" in data
    if not has_factors and not has_joint:
        return model
    if has_joint:
        joint = {tuple(key): parse_fraction(p) for key, p in data["joint"]}
        dist = Distribution(joint=joint)
    else:
        factors = {}
        for e in data["exogenous"]:
            if "distribution" not in e:
                raise ValidationError(
                    f"exogenous {e['name']} is missing its distribution")
            factors[e["name"]] = {
                v: parse_fraction(p) for v, p in zip(e["domain"], e["distribution"])}
        dist = Distribution(factors=factors)
    return ProbCausalModel(model, dist)


def dump_model(m: Union[CausalModel, ProbCausalModel]) -> str:
    return json.dumps(model_to_json(m), indent=2) + "\n"


def load_model(text: str) -> Union[CausalModel, ProbCausalModel]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}") from exc
    return model_from_json(data)
