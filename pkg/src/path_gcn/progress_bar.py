"""A module for showing progress bars while training and verifying models."""

from __future__ import annotations

import threading
from typing import Any

import rich.progress

from . import logger

log = logger.getLogger(__name__)


class ProgressBar:
    """A progress bar as a context manager which is updated with the number of
    completed epochs (or steps) and the latest loss and validation accuracy.
    The progress bar is shown if the total is at least `MIN_STEPS` and the
    console logging level shows ACTION messages.

    Only one bar is live at a time: a bar entered while another is live (eg.
    from a second training thread) stays hidden."""

    MIN_STEPS: int = 50  # Don't bother with a progress bar for short runs
    _live = threading.Lock()  # Held by the bar which owns the console display
    columns = (
        rich.progress.SpinnerColumn(),
        *rich.progress.Progress.get_default_columns(),
        rich.progress.MofNCompleteColumn(),
        rich.progress.TextColumn("{task.fields[status]}"),
    )

    def __init__(self, total: int = 0, name: str = "Progress", **kwargs: Any):
        self.total = total
        self.name = name
        self.progress = rich.progress.Progress(
            *self.columns,
            console=logger.console,
            disable=self.total < self.MIN_STEPS or not log.isEnabledFor(logger.ACTION),
            transient=True,
            **kwargs,
        )
        self.owns_display = False
        self.task: rich.progress.TaskID | None = None

    @property
    def visible(self) -> bool:
        return not self.progress.disable

    def __enter__(self) -> ProgressBar:
        if self.visible:
            self.owns_display = self._live.acquire(blocking=False)
            self.progress.disable = not self.owns_display
        p = self.progress.__enter__()
        self.task = p.add_task(f"[cyan]{self.name}", total=self.total, status="")
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        try:
            self.progress.__exit__(exc_type, exc_val, exc_tb)
        finally:
            if self.owns_display:
                self.owns_display = False
                self._live.release()

    def update(self, completed: int, **fields: float) -> None:
        """Set the number of completed steps. `fields` (eg. `loss=0.3`) are
        shown after the bar."""
        if self.task is None:
            return
        status = " ".join(f"{k}={v:.4f}" for k, v in fields.items())
        self.progress.update(self.task, completed=completed, status=status)
