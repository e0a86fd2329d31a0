# MIT License
"""Console logging for path-gcn on a shared `rich` console.

Every module logs through `getLogger(__name__)`, which returns a
`PathGCNLogger`: a `logging.Logger` with an extra `action()` method for the
ACTION level (between INFO and WARNING). Actions report the steps a command
takes ("Loading bundle...", "Wrote checkpoint..."), INFO carries tables and
results and DEBUG carries per-epoch detail.

`configure()` installs the handler once per process. Levels of single loggers
can be set with `NAME=LEVEL,...`, where NAME may drop the `path_gcn.` prefix
(eg. `model=debug,paths=warning`).
"""

from __future__ import annotations

import logging
import typing
from typing import Any, Dict, List

import numpy
import scipy
from rich.console import Console, ConsoleRenderable
from rich.highlighter import NullHighlighter
from rich.logging import RichHandler
from rich.text import Text

PACKAGE = __name__.rpartition(".")[0]
ACTION = logging.INFO + 1

# Style of each level (keyed by level number). INFO is unstyled.
LEVEL_STYLES: Dict[int, str] = {
    logging.DEBUG: "magenta",
    ACTION: "green",
    logging.WARNING: "yellow",
    logging.ERROR: "red",
    logging.CRITICAL: "bold red",
}

# file=None: write to whatever sys.stdout is at the time (pytest swaps it)
console = Console(highlight=False, soft_wrap=True)


class PathGCNLogger(logging.Logger):
    def action(self, message: str, *args: Any, **kwargs: Any) -> None:
        if self.isEnabledFor(ACTION):
            self._log(ACTION, message, args, **kwargs)


logging.addLevelName(ACTION, "ACTION")
logging.setLoggerClass(PathGCNLogger)


class LevelStyleHandler(RichHandler):
    """A `RichHandler` which prints the bare message in the style of its level."""

    def render_message(
        self, record: logging.LogRecord, message: str
    ) -> ConsoleRenderable:
        style = LEVEL_STYLES.get(record.levelno, "")
        if getattr(record, "markup", self.markup):
            return Text.from_markup(message, style=style)
        return Text(message, style=style)


handler = LevelStyleHandler(
    console=console,
    highlighter=NullHighlighter(),
    markup=True,
    show_time=False,
    show_level=False,
    show_path=False,
    rich_tracebacks=True,
    tracebacks_suppress=[numpy, scipy],  # Keep tracebacks to our own frames
)


def getLogger(name: str) -> PathGCNLogger:
    """Return the logger for `name` as a `PathGCNLogger` (with `action()`)."""
    return typing.cast(PathGCNLogger, logging.getLogger(name))


def logger_names() -> List[str]:
    """The loggers of this package created so far, sorted."""
    names = logging.root.manager.loggerDict
    return sorted(n for n in names if n == PACKAGE or n.startswith(PACKAGE + "."))


def set_levels(config: str) -> None:
    """Set levels from a `NAME=LEVEL[,NAME=LEVEL...]` string. With `list`, print
    the available logger names instead."""
    if config in ("list", "show", "help"):
        console.print("Loggers: " + ", ".join(logger_names()))
        return
    for item in config.split(","):
        name, sep, level = item.partition("=")
        if not sep or not level.strip():
            raise ValueError(f"Bad logging setting '{item}': expected NAME=LEVEL.")
        name = name.strip()
        if name != PACKAGE and not name.startswith(PACKAGE + "."):
            name = f"{PACKAGE}.{name}"
        logging.getLogger(name).setLevel(level.strip().upper())


def configure(quiet: bool = False, debug: bool = False, config: str = "") -> None:
    """Install the rich handler on the root logger and set the console level."""
    level = (
        logging.ERROR if quiet else
        logging.DEBUG if debug else
        logging.INFO
    )  # fmt: skip
    # basicConfig() is a no-op when the root logger has handlers (eg. pytest)
    logging.basicConfig(format="%(message)s", handlers=[handler], level=level)
    logging.getLogger().setLevel(level)
    if config:
        set_levels(config)
