from core.workers import default_jobs, map_tasks


def test_results_follow_item_order():
    items = [3, -1, -4, 1, -5, 9, -2, 6]
    serial = map_tasks(abs, items, jobs=1)
    parallel = map_tasks(abs, items, jobs=2)
    assert serial == parallel == [abs(v) for v in items]


def test_on_done_sees_every_task():
    seen = {}
    map_tasks(abs, [-1, -2, -3], jobs=2, on_done=lambda i, r: seen.setdefault(i, r))
    assert seen == {0: 1, 1: 2, 2: 3}


def test_empty_and_default_jobs():
    assert map_tasks(abs, [], jobs=4) == []
    assert default_jobs() >= 1
    assert map_tasks(abs, [-7], jobs=0) == [7]
