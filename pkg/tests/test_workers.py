import os

from app.core.workers import parallel_map, resolve_threads


class TestResolveThreads:
    def test_zero_means_all_cores(self):
        assert resolve_threads(0) == (os.cpu_count() or 1)

    def test_explicit_count(self):
        assert resolve_threads(3) == 3


class TestParallelMap:
    def test_inline(self):
        assert parallel_map(abs, [-3, 1, -2], threads=1) == [3, 1, 2]

    def test_order_preserved_across_workers(self):
        items = list(range(-40, 40))
        assert parallel_map(abs, items, threads=2) == [abs(i) for i in items]

    def test_keyword_arguments(self):
        """Extra keywords are bound before the items are distributed."""
        assert parallel_map(int, ["10", "11", "111"], threads=2, base=2) == [2, 3, 7]

    def test_empty(self):
        assert parallel_map(abs, [], threads=4) == []
