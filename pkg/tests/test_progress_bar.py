from __future__ import annotations

import threading

from path_gcn.progress_bar import ProgressBar


def test_one_live_bar():
    seen: list[bool] = []

    def second_bar() -> None:
        with ProgressBar(100, "Second") as bar:
            seen.append(bar.visible)
            bar.update(1, loss=0.5)

    with ProgressBar(100, "First") as first:
        assert first.visible and first.owns_display
        worker = threading.Thread(target=second_bar)
        worker.start()
        worker.join()
    assert seen == [False]
    assert not first.owns_display
    with ProgressBar(100, "Third") as third:
        assert third.visible  # The display was released by the first bar


def test_short_runs_have_no_bar():
    with ProgressBar(ProgressBar.MIN_STEPS - 1) as bar:
        assert not bar.visible and not bar.owns_display
