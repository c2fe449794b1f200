"""실행 결과 스토어 테스트"""
import time

from app.core.models import RunConfig
from app.core.store import RunStore, get_run_store

CONFIG = RunConfig(scheme="mixed", k=0)


def test_add_and_get():
    store = RunStore(ttl=60, max_size=10)
    entry = store.add(CONFIG, [])
    assert store.get(entry.run_id) is entry
    assert entry.status == "completed"
    assert store.get("missing") is None
    assert len(store) == 1


def test_oldest_entry_evicted_at_capacity():
    store = RunStore(ttl=60, max_size=2)
    first = store.add(CONFIG, [])
    time.sleep(0.001)
    second = store.add(CONFIG, [])
    third = store.add(CONFIG, [], status="failed", error="boom", failed_stage="solve")
    assert store.get(first.run_id) is None
    assert store.get(second.run_id) is second
    assert store.get(third.run_id).failed_stage == "solve"


def test_expired_entries_dropped():
    store = RunStore(ttl=-1, max_size=10)
    entry = store.add(CONFIG, [])
    assert store.get(entry.run_id) is None
    assert len(store) == 0


def test_singleton():
    assert get_run_store() is get_run_store()
