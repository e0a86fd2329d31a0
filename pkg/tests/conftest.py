from __future__ import annotations

import logging
import os
import re
import shlex
import warnings
from argparse import Namespace
from pathlib import Path
from typing import Any

import pytest
import yaml
from _pytest.config import Config

import path_gcn
from path_gcn import data_table
from path_gcn.bundle import Bundle, save_bundle, synth_graph
from path_gcn.graph import Graph, graph_from_edge_list

rootdir: Path = Path(__file__).parent.parent  # The root directory of the project
testsdir: Path = Path(__file__).parent  # Location for test files

with open(testsdir / "test_outputs.yaml") as f:
    OUTPUTS: dict[str, Any] = yaml.safe_load(f)

capsys_: pytest.CaptureFixture[str] | None = None
caplog_: pytest.LogCaptureFixture | None = None


# Class to add type annotations for command line options
class Options(Namespace):
    cora: str = ""
    args: str = ""


# The command line options provided to pytest.
options: Options = Options()


def pytest_addoption(parser: Namespace):
    parser.addoption(
        "--cora",
        dest="cora",
        action="store",
        default="",
        help="Directory of a Cora graph bundle: enables the Cora acceptance tests",
    )
    parser.addoption(
        "--args",
        dest="args",
        action="store",
        default="",
        help="Additional arguments to pass to every path-gcn command",
    )


## pytest_configure is called after command line options have been parsed
def pytest_configure(config: Config):
    global options
    options = Options(**config.option.__dict__)
    if options.cora and not (Path(options.cora) / "meta.json").exists():
        pytest.exit(f"Not a graph bundle: {options.cora}")


@pytest.fixture(autouse=True)
def my_setup(
    capsys: pytest.CaptureFixture[str],
    caplog: pytest.LogCaptureFixture,
):
    global capsys_, caplog_
    capsys_ = capsys
    caplog_ = caplog
    caplog.set_level(logging.INFO, logger="path_gcn")


def do_run(*args: str) -> int:
    """Execute the path-gcn command with the given arguments and return the
    exit status."""
    cmd = shlex.split(" ".join(("--plain", options.args, *args)))
    data_table.use_rich_table = False  # Use plain text tables for testing
    return path_gcn.main(cmd)


def run(*args: str, status: int = 0) -> str:
    """Run path-gcn and return the captured output. Fails if the exit status is
    not `status`."""
    assert capsys_ is not None
    _ = capsys_.readouterr().out  # Flush any captured output
    result = do_run(*args)
    output = capsys_.readouterr().out  # Return captured output from command
    assert result == status, f"Exit status {result}:\n{output}\n{log_messages()}"
    return output


def log_messages() -> str:
    assert caplog_ is not None
    return "\n".join([record[2] for record in caplog_.record_tuples])


# Strip whitespace from front and end of each line
def striplines(output: str) -> str:
    with warnings.catch_warnings():
        # Suppress the warning about possible nested sets in the regex
        warnings.simplefilter("ignore")
        return re.sub(
            r"\s*\n\s*",
            r"\n",
            re.sub(
                "\x1b[[0-9;]*m",
                "",
                output.strip(),
            ),
        )


def assert_output(expected: str, output: str) -> None:
    expected = striplines(expected)
    output = striplines(output)
    assert expected in output, f"Expected:\n{expected}\nOutput:\n{output}"


@pytest.fixture(scope="session")
def testdir(tmp_path_factory: Any) -> Path:
    """A fixture to create a temporary directory for testing (session scope).
    Will set the current working directory to the temporary directory
    and return the directory as a Path object."""
    path: Path = tmp_path_factory.mktemp("test_dir")  # type: ignore
    assert isinstance(path, Path)
    os.chdir(path)
    return path


@pytest.fixture(scope="session")
def star() -> Graph:
    """Node 0 joined to 4 leaves."""
    return graph_from_edge_list([(0, i) for i in range(1, 5)], 5)


@pytest.fixture(scope="session")
def path3() -> Graph:
    """The path 0 - 1 - 2."""
    return graph_from_edge_list([(0, 1), (1, 2)], 3)


@pytest.fixture(scope="session")
def lollipop() -> Graph:
    """An irregular graph: a triangle with a tail, and one isolated node."""
    return graph_from_edge_list([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)], 6)


@pytest.fixture(scope="session")
def er_graph() -> Graph:
    """The seeded 200 node Erdős–Rényi graph with edge probability 0.025."""
    return synth_graph("erdos_renyi", {"n": 200, "prob": 0.025}, seed=0).graph


@pytest.fixture(scope="session")
def cliques() -> Bundle:
    """Two 10 node cliques joined by one edge, with separable features."""
    return synth_graph("two_cliques", {"size": 10}, seed=0)


@pytest.fixture(scope="session")
def cliques_dir(testdir: Path, cliques: Bundle) -> Path:
    """The two cliques bundle written to the test directory (session scope)."""
    return save_bundle(cliques, testdir / "cliques")


@pytest.fixture(scope="session")
def cora() -> Path:
    """The Cora bundle given with `--cora DIR`. Skips the test if not given."""
    if not options.cora:
        pytest.skip("Needs a Cora bundle: use --cora DIR")
    return Path(options.cora)
