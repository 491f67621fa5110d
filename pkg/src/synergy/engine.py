"""Read path: plan and execute SELECT statements over base tables or views.

Plans are left-deep nested-loop joins seeded by the table with the most
selective bound filter.  Each access step scans either the table itself or
one of its covered indexes, by key prefix when the bound attributes allow
it, else a full scan.  Rows surfaced from a view or view-index carrying
the dirty mark abort the statement, which restarts from scratch (bounded
retries); returned rows never expose the mark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import (AmbiguityError, DirtyReadTimeout, UnknownAttributeError,
                     UnknownTableError)
from .schema import BASE, INDEX, StoreCatalog, TableHandle, VIEW
from .sqlparse import AttrRef, Placeholder, SelectJoin
from .storage import DIRTY, Store, prefix_range


@dataclass(frozen=True)
class Const:
    value: object


@dataclass(frozen=True)
class Param:
    index: int


@dataclass(frozen=True)
class OuterRef:
    alias: str
    attr: str


@dataclass(frozen=True)
class Predicate:
    attr: str
    op: str
    expr: object     # Const | Param | OuterRef


@dataclass(frozen=True)
class AccessStep:
    alias: str
    table: str               # logical base table or view
    scan_table: str          # physical table read: the table or an index
    key_exprs: tuple         # bound prefix of the scanned table's key
    residual: tuple[Predicate, ...]
    check_dirty: bool

    def describe(self) -> str:
        mode = "full"
        if self.key_exprs:
            mode = "prefix" if self.scan_table == self.table else "index"
        parts = [f"{self.alias}: {mode} scan {self.scan_table}"]
        if self.key_exprs:
            parts.append("key=[" + ", ".join(_show(e) for e in self.key_exprs)
                         + "]")
        if self.residual:
            parts.append("filter=[" + ", ".join(
                f"{p.attr} {p.op} {_show(p.expr)}" for p in self.residual)
                + "]")
        return " ".join(parts)


def _show(expr) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Param):
        return f"?{expr.index}"
    return f"{expr.alias}.{expr.attr}"


@dataclass(frozen=True)
class QueryPlan:
    steps: tuple[AccessStep, ...]
    projections: tuple[AttrRef, ...] | None    # qualified; None = all

    def describe(self) -> str:
        return "\n".join(s.describe() for s in self.steps)


def plan_query(stmt: SelectJoin, catalog: StoreCatalog) -> QueryPlan:
    """Build the left-deep plan; raises for unknown tables or attributes."""
    handles: dict[str, TableHandle] = {}
    for rel_name, alias in stmt.tables:
        handle = catalog.handle(rel_name)
        if handle.kind not in (BASE, VIEW):
            raise UnknownTableError(f"{rel_name!r} is not queryable")
        handles[alias] = handle

    def resolve(ref: AttrRef) -> AttrRef:
        if ref.qualifier is not None:
            if ref.qualifier not in handles:
                raise UnknownTableError(f"unknown alias {ref.qualifier!r}")
            if ref.name not in handles[ref.qualifier].columns:
                raise UnknownAttributeError(
                    f"{handles[ref.qualifier].name} has no "
                    f"attribute {ref.name!r}")
            return ref
        owners = [a for a, h in handles.items() if ref.name in h.columns]
        if not owners:
            raise UnknownAttributeError(f"unknown attribute {ref.name!r}")
        if len(owners) > 1:
            raise AmbiguityError(f"attribute {ref.name!r} is ambiguous")
        return AttrRef(owners[0], ref.name)

    filters: dict[str, list[Predicate]] = {a: [] for a in handles}
    for f in stmt.filters:
        ref = resolve(f.ref)
        if isinstance(f.value, Placeholder):
            expr = Param(f.value.index)
        else:
            expr = Const(f.value)
        filters[ref.qualifier].append(Predicate(ref.name, f.op, expr))

    joins = [(resolve(j.left), resolve(j.right)) for j in stmt.joins]

    projections = None
    if stmt.projections is not None:
        projections = tuple(resolve(r) for r in stmt.projections)
        names = [r.name for r in projections]
        if len(set(names)) != len(names):
            raise AmbiguityError("duplicate attribute name in projection")
    else:
        seen: dict[str, str] = {}
        for _, alias in stmt.tables:
            for col in handles[alias].columns:
                if col in seen:
                    raise AmbiguityError(
                        f"attribute {col!r} appears in both {seen[col]} "
                        f"and {alias}")
                seen[col] = alias

    def eq_bound(alias: str, placed: set[str]) -> dict[str, object]:
        bound = {p.attr: p.expr for p in filters[alias] if p.op == "="}
        for left, right in joins:
            if left.qualifier == alias and right.qualifier in placed:
                bound.setdefault(left.name,
                                 OuterRef(right.qualifier, right.name))
            elif right.qualifier == alias and left.qualifier in placed:
                bound.setdefault(right.name,
                                 OuterRef(left.qualifier, left.name))
        return bound

    def best_access(alias: str, placed: set[str]):
        """(prefix length, key exprs, physical table) for the longest
        satisfiable key prefix; table itself wins ties over indexes."""
        handle = handles[alias]
        bound = eq_bound(alias, placed)
        candidates = [(handle, 0)]
        candidates += [(catalog.handle(idx.name), 1)
                       for idx in catalog.indexes_of(handle.name)]
        best = (0, (), handle.name, 0)
        for cand, rank in candidates:
            exprs = []
            for attr in cand.key_attrs:
                if attr not in bound:
                    break
                exprs.append(bound[attr])
            score = (len(exprs), -rank)
            if exprs and score > (best[0], -best[3]):
                best = (len(exprs), tuple(exprs), cand.name, rank)
        return best

    aliases = [a for _, a in stmt.tables]
    placed: set[str] = set()
    order: list[str] = []
    while len(order) < len(aliases):
        scored = []
        for alias in aliases:
            if alias in placed:
                continue
            connected = not placed or any(
                (l.qualifier == alias and r.qualifier in placed) or
                (r.qualifier == alias and l.qualifier in placed)
                for l, r in joins)
            prefix_len, _, _, _ = best_access(alias, placed)
            scored.append((not connected, -prefix_len,
                           aliases.index(alias), alias))
        scored.sort()
        order.append(scored[0][3])
        placed.add(scored[0][3])

    steps: list[AccessStep] = []
    placed = set()
    consumed_joins: set[int] = set()
    for alias in order:
        handle = handles[alias]
        prefix_len, key_exprs, scan_table, _ = best_access(alias, placed)
        prefix_attrs = set(
            catalog.handle(scan_table).key_attrs[:prefix_len])
        # drop only the exact predicate the key prefix consumed; a second,
        # contradictory filter on the same attribute must keep filtering
        consumed_exprs = dict(zip(
            catalog.handle(scan_table).key_attrs[:prefix_len], key_exprs))
        residual = [p for p in filters[alias]
                    if not (p.op == "=" and
                            consumed_exprs.get(p.attr) == p.expr)]
        for j, (left, right) in enumerate(joins):
            if j in consumed_joins:
                continue
            mine = None
            if left.qualifier == alias and right.qualifier in placed:
                mine = Predicate(left.name, "=",
                                 OuterRef(right.qualifier, right.name))
            elif right.qualifier == alias and left.qualifier in placed:
                mine = Predicate(right.name, "=",
                                 OuterRef(left.qualifier, left.name))
            if mine is None:
                continue
            consumed_joins.add(j)
            if not (mine.attr in prefix_attrs and
                    isinstance(mine.expr, OuterRef)):
                residual.append(mine)
            elif mine.expr not in key_exprs:
                residual.append(mine)
        scan_kind = catalog.handle(scan_table).kind
        steps.append(AccessStep(
            alias=alias, table=handle.name, scan_table=scan_table,
            key_exprs=key_exprs, residual=tuple(residual),
            check_dirty=scan_kind in (VIEW, INDEX)))
        placed.add(alias)
    return QueryPlan(tuple(steps), projections)


class _DirtyRow(Exception):
    pass


_COMPARE = {
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


def execute_plan(plan: QueryPlan, params, store: Store,
                 catalog: StoreCatalog) -> list[dict]:
    """Single execution attempt; raises _DirtyRow on a marked row."""
    steps = plan.steps

    def evaluate(expr, env):
        if isinstance(expr, Const):
            return expr.value
        if isinstance(expr, Param):
            try:
                return params[expr.index]
            except IndexError:
                raise ValueError("missing query parameter") from None
        return env[expr.alias][expr.attr]

    results: list[dict] = []

    def emit(env):
        if plan.projections is not None:
            results.append({r.name: env[r.qualifier][r.name]
                            for r in plan.projections})
        else:
            out = {}
            for step in steps:
                for attr, value in env[step.alias].items():
                    if attr != DIRTY:
                        out[attr] = value
            results.append(out)

    def run(depth, env):
        step = steps[depth]
        handle = catalog.handle(step.scan_table)
        if step.key_exprs:
            values = tuple(evaluate(e, env) for e in step.key_exprs)
            start, end = prefix_range(values, handle)
            rows = store.scan(step.scan_table, start, end)
        else:
            rows = store.scan(step.scan_table)
        # outer references are fixed for the whole scan: evaluate them once
        checks = [(p.attr, p.op, evaluate(p.expr, env))
                  for p in step.residual]
        check_dirty = step.check_dirty
        alias = step.alias
        last = depth == len(steps) - 1
        for _, cells in rows:
            if check_dirty and cells.get(DIRTY):
                raise _DirtyRow()
            for attr, op, other in checks:
                value = cells.get(attr)
                if op == "=":
                    if value != other:
                        break
                elif value is None or not _COMPARE[op](value, other):
                    break
            else:
                env[alias] = cells
                if last:
                    emit(env)
                else:
                    run(depth + 1, env)
        env.pop(alias, None)

    run(0, {})
    return results


class QueryEngine:
    """Stateless executor; reads proceed without locks and re-scan on dirty."""

    def __init__(self, store: Store, catalog: StoreCatalog,
                 max_rescans: int = 100):
        self.store = store
        self.catalog = catalog
        self.max_rescans = max_rescans

    def plan(self, stmt: SelectJoin) -> QueryPlan:
        return plan_query(stmt, self.catalog)

    def execute(self, stmt: SelectJoin, params=()) -> list[dict]:
        return self.execute_plan(self.plan(stmt), params)

    def execute_plan(self, plan: QueryPlan, params=()) -> list[dict]:
        backoff = 0.0002
        for attempt in range(self.max_rescans):
            try:
                return execute_plan(plan, params, self.store, self.catalog)
            except _DirtyRow:
                # give the writer's mark window a chance to close
                if attempt:
                    time.sleep(backoff)
                    backoff = min(backoff * 2, 0.002)
        raise DirtyReadTimeout(
            f"read kept hitting marked rows after {self.max_rescans} tries")
