"""Independent reference evaluator used to check the engine and the views.

Works on plain row dicts, never on the store or the planner: queries are
evaluated as a filtered cartesian product, views as a chain of inner joins
along their foreign-key edges.  Kept deliberately separate from the
execution path so the two can disagree.
"""

from __future__ import annotations

from collections import Counter

from .sqlparse import SelectJoin, bind_params
from .storage import DIRTY

_CHECKS = {
    "=": lambda a, b: a == b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
}


def eval_select(stmt: SelectJoin, tables: dict[str, list[dict]],
                params=()) -> list[dict]:
    """Evaluate an equi-join select over in-memory relations.

    All attribute references must be alias-qualified.  Returns merged rows
    keyed by bare attribute name (star) or the projected names.
    """
    stmt = bind_params(stmt, params)
    refs = [f.ref for f in stmt.filters] + list(stmt.projections or ())
    for j in stmt.joins:
        refs += (j.left, j.right)
    for ref in refs:
        if ref.qualifier is None:
            raise ValueError(f"unqualified reference {ref.name!r}")

    envs: list[dict[str, dict]] = [{}]
    for rel_name, alias in stmt.tables:
        rows = tables.get(rel_name, [])
        extended = []
        for env in envs:
            bound = set(env) | {alias}
            conds = [j for j in stmt.joins
                     if j.left.qualifier in bound and j.right.qualifier in bound
                     and alias in (j.left.qualifier, j.right.qualifier)]
            flts = [f for f in stmt.filters if f.ref.qualifier == alias]
            for row in rows:
                probe = dict(env)
                probe[alias] = row
                if all(probe[j.left.qualifier].get(j.left.name) ==
                       probe[j.right.qualifier].get(j.right.name)
                       for j in conds) and \
                   all(row.get(f.ref.name) is not None and
                       _CHECKS[f.op](row.get(f.ref.name), f.value)
                       for f in flts):
                    extended.append(probe)
        envs = extended

    out = []
    for env in envs:
        if stmt.projections is not None:
            out.append({r.name: env[r.qualifier][r.name]
                        for r in stmt.projections})
        else:
            merged = {}
            for _, alias in stmt.tables:
                for attr, value in env[alias].items():
                    if attr != DIRTY:
                        merged[attr] = value
            out.append(merged)
    return out


def expected_view_rows(view, tables: dict[str, list[dict]]) -> list[dict]:
    """Recompute a view's content: inner join along the view's edges."""
    rows = [{a: v for a, v in r.items() if a != DIRTY}
            for r in tables.get(view.relations[0], [])]
    for edge in view.edges:
        parents = {}
        for row in rows:
            parents[tuple(row.get(a) for a in edge.pk)] = row
        joined = []
        for child in tables.get(edge.dst, []):
            parent = parents.get(tuple(child.get(a) for a in edge.fk))
            if parent is not None:
                merged = dict(parent)
                for a, v in child.items():
                    if a != DIRTY:
                        merged[a] = v
                joined.append(merged)
        rows = joined
    return rows


def row_multiset(rows: list[dict]) -> Counter:
    """Order-insensitive fingerprint for comparing result sets."""
    return Counter(frozenset(r.items()) for r in rows)
