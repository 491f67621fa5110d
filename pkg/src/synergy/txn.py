"""Transaction layer: root locks, write procedures, WAL durability.

Every write transaction holds at most one lock: the lock-table row of the
root relation covering its target (none when the relation is outside every
rooted tree).  Inserts and deletes apply one row each to the base table,
the applicable views, and their indexes between acquire and release.
Updates run the six-step procedure: lock, read, mark, update, un-mark,
release; readers seeing a marked row re-scan.

The WAL records (txn id, phase, statement text) with a begin before the
mutations and a commit after; recovery re-executes every begin without a
commit (the procedures are idempotent), then releases its lock.
"""

from __future__ import annotations

import itertools
import os
import struct
import threading
import time
from dataclasses import dataclass, field

from .errors import (LockTimeout, OrphanError, SchemaError, SynergyError,
                     WalCorruptionError)
from .maintenance import (build_delete_index_keys, build_insert_view_tuple,
                          key_values_from_filters, plan_update_rows,
                          validate_update)
from .schema import (LOCK_COLUMN, StoreCatalog, _write_key_coverage)
from .sqlparse import (Delete, Insert, Update, WriteStatement,
                       count_placeholders, parse_statement, render_statement)
from .storage import ABSENT, DIRTY, Store, encode_key
from .viewgen import RootedTree
from .viewselect import ViewDef

PHASE_BEGIN = 0
PHASE_COMMIT = 1


class CrashInjected(Exception):
    """Raised by the test-only crash hook; leaves the transaction mid-way."""


@dataclass(frozen=True)
class WalRecord:
    txn_id: int
    phase: int
    statement: str


class WriteAheadLog:
    """Append-only log of length-prefixed {txn id, phase, statement} records."""

    MAGIC = b"SYWAL1\n"

    def __init__(self, path, fsync: bool = False):
        self.path = path
        self.fsync = fsync
        self._lock = threading.Lock()
        exists = os.path.exists(path) and os.path.getsize(path) > 0
        self._fh = open(path, "ab")
        if not exists:
            self._fh.write(self.MAGIC)
            self._fh.flush()

    def append(self, txn_id: int, phase: int, statement: str) -> None:
        payload = struct.pack(">QB", txn_id, phase) + statement.encode("utf-8")
        record = struct.pack(">I", len(payload)) + payload
        with self._lock:
            self._fh.write(record)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


def read_wal(path) -> list[WalRecord]:
    """Parse the log; a torn final record is treated as the end of the log,
    structural damage raises WalCorruptionError."""
    if not os.path.exists(path):
        return []
    with open(path, "rb") as fh:
        data = fh.read()
    if not data:
        return []
    if not data.startswith(WriteAheadLog.MAGIC):
        raise WalCorruptionError("bad WAL header")
    records: list[WalRecord] = []
    pos = len(WriteAheadLog.MAGIC)
    last_begin = 0
    while pos < len(data):
        if pos + 4 > len(data):
            break                     # torn length prefix
        (n,) = struct.unpack_from(">I", data, pos)
        if pos + 4 + n > len(data):
            break                     # torn payload
        payload = data[pos + 4:pos + 4 + n]
        pos += 4 + n
        if n < 9:
            raise WalCorruptionError("record too short")
        txn_id, phase = struct.unpack_from(">QB", payload)
        if phase not in (PHASE_BEGIN, PHASE_COMMIT):
            raise WalCorruptionError(f"bad phase {phase}")
        if phase == PHASE_BEGIN:
            if txn_id <= last_begin:
                raise WalCorruptionError(
                    f"transaction ids not increasing at {txn_id}")
            last_begin = txn_id
        records.append(WalRecord(txn_id, phase,
                                 payload[9:].decode("utf-8")))
    return records


def wal_high_water(records: list[WalRecord]) -> int:
    return max((r.txn_id for r in records), default=0)


def pending_transactions(records: list[WalRecord]) -> list[WalRecord]:
    committed = {r.txn_id for r in records if r.phase == PHASE_COMMIT}
    return [r for r in records
            if r.phase == PHASE_BEGIN and r.txn_id not in committed]


# -- locks ---------------------------------------------------------------------

class LockManager:
    """Root-key locks backed by per-root lock tables and check-and-put."""

    def __init__(self, store: Store, catalog: StoreCatalog,
                 timeout: float = 10.0):
        self.store = store
        self.catalog = catalog
        self.timeout = timeout

    def _table(self, root: str) -> str:
        return self.catalog.lock_table_for(root)

    def acquire(self, root: str, key: bytes) -> None:
        """Spin with bounded exponential backoff until the CAS lands; an
        absent lock row counts as free and is created held."""
        table = self._table(root)
        deadline = time.monotonic() + self.timeout
        backoff = 0.00005
        while True:
            if self.store.check_and_put(table, key, LOCK_COLUMN, False, True):
                return
            if self.store.check_and_put(table, key, LOCK_COLUMN, ABSENT, True):
                return
            if time.monotonic() >= deadline:
                raise LockTimeout(f"lock on {root} not acquired "
                                  f"within {self.timeout}s")
            time.sleep(backoff)
            backoff = min(backoff * 2, 0.005)

    def force_acquire(self, root: str, key: bytes) -> None:
        """Recovery path: take ownership regardless of the recorded state."""
        self.store.put(self._table(root), key, {LOCK_COLUMN: True})

    def release(self, root: str, key: bytes) -> None:
        table = self._table(root)
        if self.store.check_and_put(table, key, LOCK_COLUMN, True, False):
            return
        if self.store.get(table, key) is None:
            return                    # root row deleted concurrently
        raise SynergyError(f"released a lock not held on {root}")

    def remove(self, root: str, key: bytes) -> None:
        self.store.delete(self._table(root), key)

    def held(self, root: str, key: bytes) -> bool:
        row = self.store.get(self._table(root), key)
        return bool(row and row.get(LOCK_COLUMN))


# -- transactions ----------------------------------------------------------------

@dataclass
class TxnResult:
    txn_id: int
    kind: str
    relation: str
    root: str | None = None
    locks_acquired: int = 0
    base_rows: int = 0
    view_rows: int = 0
    index_rows: int = 0
    orphan: bool = False


@dataclass
class RecoveryReport:
    replayed: list[tuple[int, str]] = field(default_factory=list)
    aborted: list[tuple[int, str, str]] = field(default_factory=list)
    next_txn_id: int = 1


class TransactionManager:
    """Thread-safe write entry point; transactions serialize per root key."""

    def __init__(self, store: Store, catalog: StoreCatalog,
                 views: list[ViewDef], trees: list[RootedTree],
                 wal: WriteAheadLog, next_txn_id: int = 1,
                 lock_timeout: float = 10.0):
        self.store = store
        self.catalog = catalog
        self.schema = catalog.schema
        self.views = views
        self.wal = wal
        self.locks = LockManager(store, catalog, lock_timeout)
        self._ids = itertools.count(next_txn_id)
        self._begin_mutex = threading.Lock()
        self.crash_after_update_step: int | None = None

        self._chain: dict[str, tuple[str, tuple]] = {}
        for tree in trees:
            for node in tree.nodes:
                path = tree.path_from_root(node)
                edges = tuple(tree.parent_edge(n) for n in path[1:])
                self._chain[node] = (tree.root, edges)
        self._roots = {tree.root for tree in trees}
        self._views_last: dict[str, list[ViewDef]] = {}
        self._views_containing: dict[str, list[ViewDef]] = {}
        for view in views:
            self._views_last.setdefault(view.last, []).append(view)
            for rel_name in view.relations:
                self._views_containing.setdefault(rel_name, []).append(view)

    # -- root resolution ---------------------------------------------------

    def resolve_root(self, stmt) -> tuple[str, bytes] | None:
        """Root relation and encoded root key covering this write, or None
        when the relation is in no rooted tree or an insert's ancestor
        chain is broken (then no view row can exist either)."""
        chain = self._chain.get(stmt.relation)
        if chain is None:
            return None
        root, edges = chain
        root_types = self.catalog.handle(root).key_types
        if isinstance(stmt, Insert):
            current = stmt.value_map
            for i in range(len(edges) - 1, -1, -1):
                edge = edges[i]
                try:
                    vals = tuple(current[a] for a in edge.fk)
                except KeyError:
                    return None
                if i == 0:
                    return root, encode_key(vals, root_types)
                parent_handle = self.catalog.handle(edge.src)
                current = self.store.get(
                    edge.src, encode_key(vals, parent_handle.key_types))
                if current is None:
                    return None
            rel = self.schema.relation(stmt.relation)
            vals = tuple(current[a] for a in rel.primary_key)
            return root, encode_key(vals, root_types)
        # delete/update: walk through stored rows
        rel = self.schema.relation(stmt.relation)
        key_vals = key_values_from_filters(stmt, rel.primary_key)
        if not edges:
            return root, encode_key(key_vals, root_types)
        handle = self.catalog.handle(stmt.relation)
        current = self.store.get(stmt.relation,
                                 encode_key(key_vals, handle.key_types))
        if current is None:
            raise OrphanError(f"{stmt.relation} row {key_vals!r} is absent")
        for i in range(len(edges) - 1, -1, -1):
            edge = edges[i]
            try:
                vals = tuple(current[a] for a in edge.fk)
            except KeyError:
                raise OrphanError(
                    f"{edge.dst} row lacks foreign key {edge.fk_name}") from None
            if i == 0:
                return root, encode_key(vals, root_types)
            parent_handle = self.catalog.handle(edge.src)
            current = self.store.get(
                edge.src, encode_key(vals, parent_handle.key_types))
            if current is None:
                raise OrphanError(f"ancestor {edge.src} row "
                                  f"{vals!r} is absent")
        raise AssertionError("unreachable")

    # -- entry point ----------------------------------------------------------

    def execute_write(self, stmt) -> TxnResult:
        if not isinstance(stmt, WriteStatement):
            raise ValueError(f"not a write statement: {stmt!r}")
        if count_placeholders(stmt):
            raise ValueError("bind parameters before executing")
        reason = _write_key_coverage(self.schema, stmt)
        if reason is not None:
            raise SchemaError(f"statement not admissible: {reason}")
        if isinstance(stmt, Update):
            validate_update(stmt, self.schema)
        text = render_statement(stmt)
        # id assignment and the begin record must land in the same order
        with self._begin_mutex:
            txn_id = next(self._ids)
            self.wal.append(txn_id, PHASE_BEGIN, text)
        try:
            result = self._run(stmt, txn_id)
        except SynergyError:
            # failed before any mutation: resolve it in the log
            self.wal.append(txn_id, PHASE_COMMIT, "")
            raise
        self.wal.append(txn_id, PHASE_COMMIT, "")
        return result

    def _run(self, stmt, txn_id: int, force_locks: bool = False) -> TxnResult:
        if isinstance(stmt, Insert):
            return self._insert(stmt, txn_id, force_locks)
        if isinstance(stmt, Delete):
            return self._delete(stmt, txn_id, force_locks)
        return self._update(stmt, txn_id, force_locks)

    def _acquire(self, root: str, key: bytes, force: bool) -> None:
        if force:
            self.locks.force_acquire(root, key)
        else:
            self.locks.acquire(root, key)

    # -- insert -----------------------------------------------------------------

    def _insert(self, stmt: Insert, txn_id: int, force: bool) -> TxnResult:
        rel = self.schema.relation(stmt.relation)
        values = stmt.value_map
        result = TxnResult(txn_id, "insert", stmt.relation)
        target = self.resolve_root(stmt)
        if target is not None:
            root, root_key = target
            self._acquire(root, root_key, force)
            result.root = root
            result.locks_acquired = 1
        elif self._chain.get(stmt.relation) is not None:
            result.orphan = True

        handle = self.catalog.handle(stmt.relation)
        base_key = encode_key(
            tuple(values[a] for a in rel.primary_key), handle.key_types)
        old = self.store.get(stmt.relation, base_key)
        if old is not None and old != values:
            # overwriting an existing row: index rows keyed on changed
            # attributes would otherwise be stranded at their old keys
            self._drop_index_rows(stmt.relation, old)
            for view in self._views_last.get(stmt.relation, ()):
                vh = self.catalog.handle(view.name)
                vkey = encode_key(tuple(old[a] for a in view.key),
                                  vh.key_types)
                old_view_row = self.store.get(view.name, vkey)
                if old_view_row is not None:
                    self._drop_index_rows(view.name, old_view_row)
        self.store.put(stmt.relation, base_key, dict(values))
        result.base_rows = 1
        result.index_rows += self._put_index_rows(stmt.relation, values)
        for view in self._views_last.get(stmt.relation, ()):
            built = build_insert_view_tuple(view, stmt, self.store,
                                            self.catalog)
            if built is None:
                vh = self.catalog.handle(view.name)
                self.store.delete(view.name, encode_key(
                    tuple(values[a] for a in view.key), vh.key_types))
                continue
            vkey, cells = built
            self.store.put(view.name, vkey, cells)
            result.view_rows += 1
            result.index_rows += self._put_index_rows(view.name, cells)
        if target is not None:
            self.locks.release(root, root_key)
        return result

    def _drop_index_rows(self, base: str, cells: dict) -> None:
        for idx in self.catalog.indexes_of(base):
            ih = self.catalog.handle(idx.name)
            try:
                key = encode_key(tuple(cells[a] for a in ih.key_attrs),
                                 ih.key_types)
            except KeyError:
                continue
            self.store.delete(idx.name, key)

    def _put_index_rows(self, base: str, cells: dict) -> int:
        count = 0
        for idx in self.catalog.indexes_of(base):
            ih = self.catalog.handle(idx.name)
            try:
                key = encode_key(tuple(cells[a] for a in ih.key_attrs),
                                 ih.key_types)
            except KeyError:
                continue              # key attribute absent: row not indexable
            self.store.put(idx.name, key,
                           {a: cells[a] for a in ih.columns if a in cells})
            count += 1
        return count

    # -- delete -----------------------------------------------------------------

    def _delete(self, stmt: Delete, txn_id: int, force: bool) -> TxnResult:
        rel = self.schema.relation(stmt.relation)
        key_vals = key_values_from_filters(stmt, rel.primary_key)
        result = TxnResult(txn_id, "delete", stmt.relation)
        target = self.resolve_root(stmt)
        if target is not None:
            root, root_key = target
            self._acquire(root, root_key, force)
            result.root = root
            result.locks_acquired = 1

        handle = self.catalog.handle(stmt.relation)
        base_key = encode_key(key_vals, handle.key_types)
        old = self.store.get(stmt.relation, base_key)
        if old is not None and _row_matches(old, stmt.filters):
            # views and their indexes first so a replay still sees the base row
            for view in self._views_last.get(stmt.relation, ()):
                for iname, ikey in build_delete_index_keys(
                        view, stmt, self.store, self.catalog):
                    result.index_rows += self.store.delete(iname, ikey)
                vh = self.catalog.handle(view.name)
                result.view_rows += self.store.delete(
                    view.name, encode_key(key_vals, vh.key_types))
            for idx in self.catalog.indexes_of(stmt.relation):
                ih = self.catalog.handle(idx.name)
                try:
                    ikey = encode_key(tuple(old[a] for a in ih.key_attrs),
                                      ih.key_types)
                except KeyError:
                    continue
                result.index_rows += self.store.delete(idx.name, ikey)
            result.base_rows += self.store.delete(stmt.relation, base_key)
        if target is not None:
            self.locks.release(root, root_key)
            if stmt.relation == root:
                self.locks.remove(root, root_key)
        return result

    # -- update (six steps) --------------------------------------------------------

    def _crash(self, step: int) -> None:
        if self.crash_after_update_step == step:
            self.crash_after_update_step = None
            raise CrashInjected(f"crash injected after update step {step}")

    def _update(self, stmt: Update, txn_id: int, force: bool) -> TxnResult:
        validate_update(stmt, self.schema)
        rel = self.schema.relation(stmt.relation)
        key_vals = key_values_from_filters(stmt, rel.primary_key)
        result = TxnResult(txn_id, "update", stmt.relation)

        # step 1: acquire the root lock
        target = self.resolve_root(stmt)
        if target is not None:
            root, root_key = target
            self._acquire(root, root_key, force)
            result.root = root
            result.locks_acquired = 1
        self._crash(1)

        # step 2: read every row to be updated
        handle = self.catalog.handle(stmt.relation)
        base_key = encode_key(key_vals, handle.key_types)
        base_old = self.store.get(stmt.relation, base_key)
        applies = base_old is not None and _row_matches(base_old, stmt.filters)
        plans = []
        if applies:
            plans = [plan_update_rows(view, stmt, self.store, self.catalog)
                     for view in self._views_containing.get(stmt.relation, ())]
        self._crash(2)

        # step 3: mark every view and view-index row to be updated
        for plan in plans:
            for vkey, old, _ in plan.rows:
                marked = dict(old)
                marked[DIRTY] = True
                self.store.put(plan.view, vkey, marked)
            for iname, old_ikey, _, _ in plan.index_ops:
                iold = self.store.get(iname, old_ikey)
                if iold is not None:
                    marked = dict(iold)
                    marked[DIRTY] = True
                    self.store.put(iname, old_ikey, marked)
        self._crash(3)

        # step 4: apply the updates (marks stay on until step 5)
        if applies:
            new_base = dict(base_old)
            new_base.update(dict(stmt.assignments))
            self._update_base_indexes(stmt.relation, base_old, new_base)
            self.store.put(stmt.relation, base_key, new_base)
            result.base_rows = 1
        for plan in plans:
            for vkey, _, new in plan.rows:
                staged = dict(new)
                staged[DIRTY] = True
                self.store.put(plan.view, vkey, staged)
                result.view_rows += 1
            for iname, old_ikey, new_ikey, new_cells in plan.index_ops:
                staged = dict(new_cells)
                staged[DIRTY] = True
                self.store.put(iname, new_ikey, staged)
                if new_ikey != old_ikey:
                    self.store.delete(iname, old_ikey)
                result.index_rows += 1
        self._crash(4)

        # step 5: un-mark everything written
        for plan in plans:
            for vkey, _, new in plan.rows:
                self.store.put(plan.view, vkey, dict(new))
            for iname, _, new_ikey, new_cells in plan.index_ops:
                self.store.put(iname, new_ikey, dict(new_cells))
        self._crash(5)

        # step 6: release the lock
        if target is not None:
            self.locks.release(root, root_key)
        self._crash(6)
        return result

    def _update_base_indexes(self, relation: str, old: dict, new: dict) -> None:
        for idx in self.catalog.indexes_of(relation):
            ih = self.catalog.handle(idx.name)
            try:
                old_key = encode_key(tuple(old[a] for a in ih.key_attrs),
                                     ih.key_types)
                new_key = encode_key(tuple(new[a] for a in ih.key_attrs),
                                     ih.key_types)
            except KeyError:
                continue
            if new_key != old_key:
                self.store.delete(idx.name, old_key)
            self.store.put(idx.name, new_key,
                           {a: new[a] for a in ih.columns if a in new})

    # -- recovery ------------------------------------------------------------------

    def recover(self) -> RecoveryReport:
        """Re-execute every begin-without-commit transaction from its logged
        statement, then release its lock; runs before serving traffic."""
        records = read_wal(self.wal.path)
        report = RecoveryReport(next_txn_id=wal_high_water(records) + 1)
        self._ids = itertools.count(report.next_txn_id)
        for record in pending_transactions(records):
            stmt = parse_statement(record.statement)
            try:
                self._run(stmt, record.txn_id, force_locks=True)
                report.replayed.append((record.txn_id, record.statement))
            except SynergyError as exc:
                report.aborted.append(
                    (record.txn_id, record.statement, str(exc)))
            self.wal.append(record.txn_id, PHASE_COMMIT, "")
        return report


def _row_matches(row: dict, filters) -> bool:
    for f in filters:
        value = row.get(f.ref.name)
        if value is None:
            return False
        if f.op == "=" and not value == f.value:
            return False
        if f.op == "<" and not value < f.value:
            return False
        if f.op == ">" and not value > f.value:
            return False
        if f.op == "<=" and not value <= f.value:
            return False
        if f.op == ">=" and not value >= f.value:
            return False
    return True
