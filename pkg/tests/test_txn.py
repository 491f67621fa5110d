import threading
import time

import pytest

from synergy.db import Database
from synergy.errors import (LockTimeout, OrphanError, SchemaError,
                            UnsupportedUpdate, WalCorruptionError)
from synergy.fixtures import tpcw_micro_schema, tpcw_micro_workload
from synergy.schema import LOCK_COLUMN
from synergy.sqlparse import parse_statement
from synergy.storage import DIRTY, encode_key
from synergy.txn import (CrashInjected, PHASE_BEGIN, PHASE_COMMIT,
                         TransactionManager, WriteAheadLog,
                         pending_transactions, read_wal, wal_high_water)


@pytest.fixture()
def db(tmp_path):
    database = Database.create(tpcw_micro_schema(), tpcw_micro_workload(),
                               data_dir=str(tmp_path / "data"))
    yield database
    database.close()


def seed_rows(db, customers=2, orders=2, lines=2):
    oid = lid = 0
    for c in range(1, customers + 1):
        db.execute(f"INSERT INTO Customer (C_ID, C_UNAME, C_BALANCE) "
                   f"VALUES ({c}, 'u{c}', 0)")
        for _ in range(orders):
            oid += 1
            db.execute(f"INSERT INTO Order (O_ID, O_C_ID, O_STATUS, O_TOTAL)"
                       f" VALUES ({oid}, {c}, 's', 5)")
            for _ in range(lines):
                lid += 1
                db.execute(f"INSERT INTO Order_line (OL_ID, OL_O_ID, "
                           f"OL_I_ID, OL_QTY) VALUES ({lid}, {oid}, 1, 1)")
    return oid, lid


def key_of(value):
    return encode_key((value,), ("int",))


# -- root resolution ----------------------------------------------------------------

def test_resolve_root_walks_fk_chain(db):
    seed_rows(db)
    stmt = parse_statement("INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID,"
                           " OL_QTY) VALUES (99, 3, 1, 1)")
    root, key = db.txn.resolve_root(stmt)
    assert root == "Customer"
    assert key == key_of(2)          # order 3 belongs to customer 2


def test_resolve_root_for_root_insert_is_own_key(db):
    stmt = parse_statement("INSERT INTO Customer (C_ID, C_UNAME, C_BALANCE) "
                           "VALUES (42, 'x', 0)")
    assert db.txn.resolve_root(stmt) == ("Customer", key_of(42))


def test_resolve_root_outside_trees_is_none(db):
    stmt = parse_statement("INSERT INTO Country (CO_ID, CO_NAME) "
                           "VALUES (1, 'n')")
    assert db.txn.resolve_root(stmt) is None


def test_resolve_root_orphan_delete_raises(db):
    with pytest.raises(OrphanError):
        db.txn.resolve_root(parse_statement(
            "DELETE FROM Order_line WHERE OL_ID = 12345"))


def test_orphan_insert_takes_no_lock_and_writes_base_only(db):
    result = db.execute("INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, "
                        "OL_QTY) VALUES (7, 999, 1, 1)")
    assert result.orphan is True
    assert result.locks_acquired == 0
    assert result.base_rows == 1
    assert result.view_rows == 0


# -- lock manager -----------------------------------------------------------------------

def test_lock_acquire_release_cycle(db):
    locks = db.txn.locks
    locks.acquire("Customer", key_of(1))
    assert locks.held("Customer", key_of(1)) is True
    locks.release("Customer", key_of(1))
    assert locks.held("Customer", key_of(1)) is False


def test_blocked_acquirer_proceeds_after_release(db):
    locks = db.txn.locks
    locks.acquire("Customer", key_of(1))
    acquired = threading.Event()

    def waiter():
        locks.acquire("Customer", key_of(1))
        acquired.set()

    t = threading.Thread(target=waiter)
    t.start()
    time.sleep(0.05)
    assert not acquired.is_set()
    locks.release("Customer", key_of(1))
    t.join(timeout=5)
    assert acquired.is_set()


def test_contended_lock_is_mutually_exclusive(db):
    locks = db.txn.locks
    holders = []
    errors = []

    def worker():
        for _ in range(20):
            locks.acquire("Customer", key_of(9))
            holders.append(1)
            if len(holders) > 1:
                errors.append("two holders")
            holders.pop()
            locks.release("Customer", key_of(9))

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


def test_lock_timeout(tmp_path):
    database = Database.create(tpcw_micro_schema(), tpcw_micro_workload(),
                               data_dir=str(tmp_path / "t"),
                               lock_timeout=0.1)
    try:
        database.txn.locks.acquire("Customer", key_of(1))
        with pytest.raises(LockTimeout):
            database.txn.locks.acquire("Customer", key_of(1))
    finally:
        database.close()


# -- write procedures ----------------------------------------------------------------------

def test_insert_applies_only_to_views_where_relation_is_last(db):
    seed_rows(db, customers=1, orders=0, lines=0)
    result = db.execute("INSERT INTO Order (O_ID, O_C_ID, O_STATUS, O_TOTAL)"
                        " VALUES (1, 1, 's', 5)")
    # one view row in V_Customer_Order; none in the three-relation view
    assert result.view_rows == 1
    assert db.store.count("V_Customer_Order") == 1
    assert db.store.count("V_Customer_Order_Order_line") == 0


def test_every_in_tree_write_takes_exactly_one_lock(db):
    oid, lid = seed_rows(db)
    statements = [
        "INSERT INTO Customer (C_ID, C_UNAME, C_BALANCE) VALUES (50, 'x', 1)",
        f"INSERT INTO Order (O_ID, O_C_ID, O_STATUS, O_TOTAL) "
        f"VALUES ({oid + 1}, 1, 's', 5)",
        f"INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, OL_QTY) "
        f"VALUES ({lid + 1}, 1, 1, 1)",
        "UPDATE Customer SET C_BALANCE = 9 WHERE C_ID = 1",
        "UPDATE Order SET O_STATUS = 'x' WHERE O_ID = 1",
        f"DELETE FROM Order_line WHERE OL_ID = {lid}",
    ]
    for text in statements:
        result = db.execute(text)
        assert result.locks_acquired == 1, text
    out_of_tree = db.execute("INSERT INTO Country (CO_ID, CO_NAME) "
                             "VALUES (1, 'n')")
    assert out_of_tree.locks_acquired == 0


def test_root_insert_creates_lock_row_and_root_delete_removes_it(db):
    db.execute("INSERT INTO Customer (C_ID, C_UNAME, C_BALANCE) "
               "VALUES (5, 'u', 0)")
    row = db.store.get("LK_Customer", key_of(5))
    assert row == {LOCK_COLUMN: False}
    db.execute("DELETE FROM Customer WHERE C_ID = 5")
    assert db.store.get("LK_Customer", key_of(5)) is None


def test_update_rejects_key_and_fk_assignments(db):
    seed_rows(db, customers=1, orders=1, lines=0)
    with pytest.raises(UnsupportedUpdate):
        db.execute("UPDATE Order SET O_C_ID = 2 WHERE O_ID = 1")
    with pytest.raises(UnsupportedUpdate):
        db.execute("UPDATE Order SET O_ID = 2 WHERE O_ID = 1")


def test_write_missing_key_attributes_is_rejected(db):
    with pytest.raises(SchemaError):
        db.execute("INSERT INTO Order (O_C_ID, O_STATUS, O_TOTAL) "
                   "VALUES (1, 's', 5)")


def test_observer_never_sees_dirty_rows_during_update(db):
    seed_rows(db, customers=1, orders=3, lines=3)
    stop = threading.Event()
    violations = []

    def observer():
        q = db.rewrite.statements[1]       # view-backed customer scan
        while not stop.is_set():
            for row in db.execute(q, (1,)):
                if DIRTY in row:
                    violations.append(row)

    t = threading.Thread(target=observer)
    t.start()
    for i in range(60):
        db.execute(f"UPDATE Customer SET C_BALANCE = {i} WHERE C_ID = 1")
    stop.set()
    t.join()
    assert violations == []
    assert db.verify().ok


def test_reader_sees_pre_or_post_update_values_only(db):
    seed_rows(db, customers=1, orders=2, lines=2)
    q = db.rewrite.statements[1]
    stop = threading.Event()
    bad = []

    def reader():
        while not stop.is_set():
            rows = db.execute(q, (1,))
            balances = {r["C_BALANCE"] for r in rows}
            if len(balances) > 1:      # torn across the multi-row update
                bad.append(balances)

    t = threading.Thread(target=reader)
    t.start()
    for i in range(60):
        db.execute(f"UPDATE Customer SET C_BALANCE = {i} WHERE C_ID = 1")
    stop.set()
    t.join()
    assert bad == []


# -- WAL ------------------------------------------------------------------------------------

def test_wal_records_begin_then_commit(db):
    seed_rows(db, customers=1, orders=0, lines=0)
    records = read_wal(db.wal.path)
    assert [r.phase for r in records] == [PHASE_BEGIN, PHASE_COMMIT]
    assert records[0].txn_id == records[1].txn_id
    assert "INSERT INTO Customer" in records[0].statement
    assert pending_transactions(records) == []


def test_wal_ids_strictly_increase(db):
    seed_rows(db)
    records = read_wal(db.wal.path)
    begins = [r.txn_id for r in records if r.phase == PHASE_BEGIN]
    assert begins == sorted(begins)
    assert len(set(begins)) == len(begins)


def test_wal_truncated_tail_is_tolerated(tmp_path):
    path = tmp_path / "wal.bin"
    wal = WriteAheadLog(path)
    wal.append(1, PHASE_BEGIN, "DELETE FROM T WHERE k = 1")
    wal.append(1, PHASE_COMMIT, "")
    wal.append(2, PHASE_BEGIN, "DELETE FROM T WHERE k = 2")
    wal.close()
    data = path.read_bytes()
    path.write_bytes(data[:-3])     # torn final record
    records = read_wal(path)
    assert [r.txn_id for r in records] == [1, 1]


def test_wal_structural_corruption_raises(tmp_path):
    path = tmp_path / "wal.bin"
    wal = WriteAheadLog(path)
    wal.append(1, PHASE_BEGIN, "x")
    wal.close()
    data = bytearray(path.read_bytes())
    data[len(WriteAheadLog.MAGIC) + 4 + 8] = 9      # invalid phase byte
    path.write_bytes(bytes(data))
    with pytest.raises(WalCorruptionError):
        read_wal(path)
    path.write_bytes(b"garbage")
    with pytest.raises(WalCorruptionError):
        read_wal(path)


def test_txn_ids_resume_from_wal_high_water(db, tmp_path):
    seed_rows(db, customers=1, orders=1, lines=1)
    db.save(str(tmp_path / "copy"))
    high = wal_high_water(read_wal(db.wal.path))
    reopened = Database.open(str(tmp_path / "copy"))
    try:
        result = reopened.execute(
            "INSERT INTO Customer (C_ID, C_UNAME, C_BALANCE) "
            "VALUES (99, 'z', 0)")
        assert result.txn_id == high + 1
    finally:
        reopened.close()


# -- crash injection and recovery ----------------------------------------------------------

def manager_like(db) -> TransactionManager:
    return TransactionManager(db.store, db.catalog, db.views, db.trees,
                              db.wal, next_txn_id=10_000)


@pytest.mark.parametrize("step", [1, 2, 3, 4, 5, 6])
def test_crash_at_each_update_step_then_recover(db, step):
    seed_rows(db, customers=2, orders=3, lines=3)
    db.txn.crash_after_update_step = step
    with pytest.raises(CrashInjected):
        db.execute("UPDATE Customer SET C_BALANCE = 777 WHERE C_ID = 1")
    # the failed transaction must keep its lock until recovery (except
    # after step 6, where it was already released)
    if step < 6:
        assert db.txn.locks.held("Customer", key_of(1))

    replacement = manager_like(db)
    report = replacement.recover()
    assert len(report.replayed) == 1
    assert "UPDATE Customer" in report.replayed[0][1]
    assert not replacement.locks.held("Customer", key_of(1))

    verify = db.verify()
    assert verify.dirty_cells == 0
    assert verify.ok, verify.describe()
    # the update landed exactly once
    row = db.store.get("Customer", key_of(1))
    assert row["C_BALANCE"] == 777
    # recovery resolved the transaction: nothing pending remains
    assert pending_transactions(read_wal(db.wal.path)) == []


def test_recover_empty_wal_is_noop(db):
    report = manager_like(db).recover()
    assert report.replayed == []
    assert report.aborted == []


def test_recover_skips_committed_transactions(db):
    seed_rows(db, customers=1, orders=1, lines=0)
    before = db.store.get("Customer", key_of(1))
    report = manager_like(db).recover()
    assert report.replayed == []
    assert db.store.get("Customer", key_of(1)) == before


def test_recover_resolves_failed_statement_as_aborted(db):
    # a begin record whose statement cannot re-execute cleanly: orphan
    db.wal.append(500, PHASE_BEGIN,
                  "DELETE FROM Order_line WHERE OL_ID = 31337")
    report = manager_like(db).recover()
    assert len(report.aborted) == 1
    assert pending_transactions(read_wal(db.wal.path)) == []


def test_recovered_insert_is_idempotent(db):
    seed_rows(db, customers=1, orders=1, lines=1)
    # simulate a crash right before the commit record of a fully applied
    # insert: replay must not duplicate rows
    text = ("INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, OL_QTY) "
            "VALUES (70, 1, 2, 3)")
    db.execute(text)
    db.wal.append(700, PHASE_BEGIN, text)
    report = manager_like(db).recover()
    assert len(report.replayed) == 1
    assert db.store.count("Order_line") == 2
    assert db.verify().ok


def test_concurrent_writers_against_shared_roots(db):
    seed_rows(db, customers=4, orders=2, lines=2)
    errors = []

    def worker(wid):
        try:
            for i in range(30):
                c = (i % 4) + 1
                db.execute(f"UPDATE Customer SET C_BALANCE = {wid * 100 + i}"
                           f" WHERE C_ID = {c}")
                db.execute(
                    f"INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, "
                    f"OL_QTY) VALUES ({1000 + wid * 100 + i}, "
                    f"{(i % 8) + 1}, 1, 1)")
        except Exception as exc:       # noqa: BLE001 - recorded for assert
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    report = db.verify()
    assert report.ok, report.describe()
    assert report.locks_held == 0


def test_reinsert_same_key_relocates_index_rows(db):
    seed_rows(db, customers=1, orders=1, lines=1)
    # overwrite order line 1 with different attribute values; the covered
    # index rows keyed on the old values must not linger
    db.execute("INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, OL_QTY) "
               "VALUES (1, 1, 77, 9)")
    report = db.verify()
    assert report.ok, report.describe()
    row = db.store.get("Order_line", key_of(1))
    assert row == {"OL_ID": 1, "OL_O_ID": 1, "OL_I_ID": 77, "OL_QTY": 9}


def test_reinsert_pointing_at_missing_parent_drops_view_row(db):
    seed_rows(db, customers=1, orders=1, lines=1)
    db.execute("INSERT INTO Order_line (OL_ID, OL_O_ID, OL_I_ID, OL_QTY) "
               "VALUES (1, 404, 1, 1)")
    report = db.verify()
    assert report.ok, report.describe()
    assert db.store.count("V_Customer_Order_Order_line") == 0
