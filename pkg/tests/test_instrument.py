from __future__ import annotations

import threading

from dab import instrument


def test_tally_outside_block_is_ignored():
    instrument.tally(instrument.LM_FORWARD)
    with instrument.counting() as c:
        pass
    assert c[instrument.LM_FORWARD] == 0


def test_nested_counters_both_see_events():
    with instrument.counting() as outer:
        instrument.tally(instrument.LM_FORWARD)
        with instrument.counting() as inner:
            instrument.tally(instrument.LM_FORWARD, 3)
        instrument.tally(instrument.CONSTRAINT_BACKWARD)
    assert outer[instrument.LM_FORWARD] == 4
    assert inner[instrument.LM_FORWARD] == 3
    assert inner[instrument.CONSTRAINT_BACKWARD] == 0
    assert outer[instrument.CONSTRAINT_BACKWARD] == 1


def test_threads_do_not_share_counters():
    seen = {}

    def worker(name, k):
        with instrument.counting() as c:
            for _ in range(k):
                instrument.tally(instrument.LM_FORWARD)
        seen[name] = c[instrument.LM_FORWARD]

    with instrument.counting() as main:
        threads = [threading.Thread(target=worker, args=(i, i + 1)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert seen == {0: 1, 1: 2, 2: 3, 3: 4}
    assert main[instrument.LM_FORWARD] == 0
