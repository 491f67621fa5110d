"""View-maintenance planning: applicability tests and tuple/key construction.

All functions here only read through the supplied reader (anything with
``get``/``scan``); mutation is the transaction layer's job.  Inserts and
deletes apply to a view only when the written relation is the view's last
relation; updates apply whenever the relation occurs in the view.  Inserts
construct the view tuple by walking the foreign keys upward, one read per
ancestor relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import SchemaError, UnsupportedUpdate
from .schema import StoreCatalog
from .sqlparse import Delete, Insert, Update
from .storage import DIRTY, encode_key, prefix_range
from .viewselect import ViewDef


def insert_applies(view: ViewDef, relation: str) -> bool:
    return relation == view.last


def delete_applies(view: ViewDef, relation: str) -> bool:
    # no cascading deletes: only the last relation's rows map 1:1 to view rows
    return relation == view.last


def update_applies(view: ViewDef, relation: str) -> bool:
    return relation in view.relations


def key_values_from_filters(stmt, primary_key: tuple[str, ...]) -> tuple:
    """Primary-key values pinned by equality filters, in key order."""
    eq = {f.ref.name: f.value for f in stmt.filters if f.op == "="}
    try:
        return tuple(eq[a] for a in primary_key)
    except KeyError as e:
        raise SchemaError(
            f"statement does not pin key attribute {e.args[0]!r}") from None


def build_insert_view_tuple(view: ViewDef, insert: Insert, reader,
                            catalog: StoreCatalog):
    """View row for a base insert, or None when an ancestor row is missing
    (inner-join semantics).  Performs exactly one read per ancestor."""
    if not insert_applies(view, insert.relation):
        raise ValueError(f"insert into {insert.relation} does not "
                         f"apply to {view.name}")
    values = insert.value_map
    collected = [values]
    current = values
    for edge in reversed(view.edges):
        parent_handle = catalog.handle(edge.src)
        try:
            key_vals = tuple(current[a] for a in edge.fk)
        except KeyError:
            return None
        parent = reader.get(edge.src, encode_key(key_vals,
                                                 parent_handle.key_types))
        if parent is None:
            return None
        collected.append(parent)
        current = parent
    cells: dict = {}
    for row in reversed(collected):
        for attr, value in row.items():
            if attr != DIRTY:
                cells[attr] = value
    view_handle = catalog.handle(view.name)
    key = encode_key(tuple(values[a] for a in view.key),
                     view_handle.key_types)
    return key, cells


def build_delete_index_keys(view: ViewDef, delete: Delete, reader,
                            catalog: StoreCatalog) -> list[tuple[str, bytes]]:
    """Index keys to delete alongside a view row: read the view row by the
    base key, then assemble each view-index key from its cells."""
    if not delete_applies(view, delete.relation):
        raise ValueError(f"delete from {delete.relation} does not "
                         f"apply to {view.name}")
    view_handle = catalog.handle(view.name)
    key_vals = key_values_from_filters(delete, view.key)
    row = reader.get(view.name, encode_key(key_vals, view_handle.key_types))
    if row is None:
        return []
    out = []
    for idx in catalog.indexes_of(view.name):
        ih = catalog.handle(idx.name)
        out.append((idx.name, encode_key(
            tuple(row[a] for a in ih.key_attrs), ih.key_types)))
    return out


@dataclass
class UpdatePlan:
    view: str
    rows: list[tuple[bytes, dict, dict]] = field(default_factory=list)
    #: (index table, old key, new key, new cells)
    index_ops: list[tuple[str, bytes, bytes, dict]] = field(default_factory=list)


def validate_update(update: Update, schema) -> None:
    """Reject assignments that touch primary-key or foreign-key attributes;
    view membership changes are out of contract."""
    rel = schema.relation(update.relation)
    frozen = set(rel.primary_key)
    for fk in rel.foreign_keys:
        frozen.update(fk.attrs)
    names = set(rel.attr_names)
    for attr, _ in update.assignments:
        if attr not in names:
            raise SchemaError(
                f"relation {rel.name} has no attribute {attr!r}")
        if attr in frozen:
            raise UnsupportedUpdate(
                f"assignment to key attribute {rel.name}.{attr}")


def plan_update_rows(view: ViewDef, update: Update, reader,
                     catalog: StoreCatalog) -> UpdatePlan:
    """Locate the view rows touched by a base-table update and compute
    their replacement cells plus the matching view-index operations.

    Rows are found via the view key when the updated relation is last,
    else via a view-index keyed on the relation's primary key, else by a
    full view scan.
    """
    if not update_applies(view, update.relation):
        raise ValueError(f"update of {update.relation} does not "
                         f"apply to {view.name}")
    validate_update(update, catalog.schema)
    rel = catalog.schema.relation(update.relation)
    key_vals = key_values_from_filters(update, rel.primary_key)
    view_handle = catalog.handle(view.name)
    assignments = dict(update.assignments)

    located: list[tuple[bytes, dict]] = []
    if update.relation == view.last:
        vkey = encode_key(key_vals, view_handle.key_types)
        row = reader.get(view.name, vkey)
        if row is not None:
            located.append((vkey, row))
    else:
        lookup = next(
            (idx for idx in catalog.indexes_of(view.name)
             if idx.indexed_on == rel.primary_key), None)
        if lookup is not None:
            ih = catalog.handle(lookup.name)
            start, end = prefix_range(key_vals, ih)
            for _, icells in reader.scan(lookup.name, start, end):
                vkey = encode_key(tuple(icells[a] for a in view.key),
                                  view_handle.key_types)
                row = reader.get(view.name, vkey)
                if row is not None:
                    located.append((vkey, row))
        else:
            pk_pairs = list(zip(rel.primary_key, key_vals))
            for vkey, row in reader.scan(view.name):
                if all(row.get(a) == v for a, v in pk_pairs):
                    located.append((vkey, row))

    plan = UpdatePlan(view.name)
    indexes = [(idx, catalog.handle(idx.name))
               for idx in catalog.indexes_of(view.name)]
    for vkey, old in located:
        new = {a: v for a, v in old.items() if a != DIRTY}
        new.update(assignments)
        plan.rows.append((vkey, old, new))
        for idx, ih in indexes:
            old_ikey = encode_key(tuple(old[a] for a in ih.key_attrs),
                                  ih.key_types)
            new_ikey = encode_key(tuple(new[a] for a in ih.key_attrs),
                                  ih.key_types)
            new_cells = {a: new[a] for a in ih.columns if a in new}
            plan.index_ops.append((idx.name, old_ikey, new_ikey, new_cells))
    return plan
