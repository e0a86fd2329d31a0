# MIT License
"""
Builds `argparse` parsers for a program with sub-commands from usage strings
and a typed namespace.

Each usage string has up to four paragraphs: the program (or sub-command) name,
a description, one line per argument and an epilog. An argument line reads

    -o --output FILE    | help text     | action

where the action is optional (an argparse action or one of the aliases in
`ACTIONS`). The field named after the last option (`output` above) must be
annotated on the typed namespace. Its type hint:

1. converts the string argument (the `type=` of `add_argument()`), and
2. lets mypy check the fields of the namespace returned by `parse_args()`.

Bool fields become `store_true` flags. Types may be mapped to conversion
functions in a `_type_conversions` dict on the namespace, and `_globals` on the
namespace resolves string annotations.
"""

from __future__ import annotations

from argparse import ArgumentParser, Namespace
from itertools import takewhile
from typing import Any, Dict, List, Mapping, NamedTuple, Sequence, get_type_hints

ACTIONS = {
    "S": "store",
    "T": "store_true",
    "SC": "store_const",
    "A": "append",
    "AC": "append_const",
    "C": "count",
    "H": "help",
    "V": "version",
}


class ArgumentSpec(NamedTuple):
    """One argument line of a usage string."""

    options: List[str]  # eg. ["-o", "--output"], or ["kind"] for a positional
    metavars: List[str]  # eg. ["FILE"]
    help: str
    action: str

    @property
    def field(self) -> str:
        """The namespace field: the last option without dashes, "-" as "_"."""
        return self.options[-1].lstrip("-").replace("-", "_")

    @property
    def is_flag(self) -> bool:
        return self.options[0].startswith("-") and not self.metavars

    @staticmethod
    def from_line(line: str) -> ArgumentSpec:
        argstr, help, action, *_ = (s.strip() for s in f"{line}|||".split("|", 3))
        words = argstr.split()
        # Leading "-" words are options, the rest are metavars. A line with no
        # options is a positional argument.
        options = list(takewhile(lambda s: s.startswith("-"), words)) or words
        return ArgumentSpec(options, words[len(options) :], help, action)


class Usage(NamedTuple):
    """The paragraphs of a usage string."""

    name: str
    description: str
    arguments: List[ArgumentSpec]
    epilog: str

    @property
    def summary(self) -> str | None:
        """The first line of the description (shown in the command list)."""
        return self.description.splitlines()[0] if self.description else None

    @staticmethod
    def from_text(text: str) -> Usage:
        name, description, arguments, epilog = (
            paragraph.strip() for paragraph in f"{text}\n\n\n\n".split("\n\n", 3)
        )
        specs = [ArgumentSpec.from_line(s) for s in arguments.splitlines() if s.strip()]
        return Usage(name, description, specs, epilog)


class ArgumentTypes:
    """The argument types declared by a typed namespace."""

    def __init__(self, typed_namespace: Namespace | None):
        self.namespace = typed_namespace
        globalns = getattr(typed_namespace, "_globals", {})
        self.hints: Dict[str, Any] = get_type_hints(typed_namespace, globalns)
        self.conversions = getattr(typed_namespace, "_type_conversions", {})

    def __getitem__(self, field: str) -> Any:
        argtype = self.hints.get(field)
        if not argtype:
            raise ValueError(f"Argument `{field}` not found in {self.namespace}")
        return self.conversions.get(argtype, argtype)

    def kwargs(self, spec: ArgumentSpec) -> Dict[str, Any]:
        """The keyword arguments of `add_argument()` for `spec`."""
        kwargs: Dict[str, Any] = {}
        metavars, action = spec.metavars, spec.action
        if len(metavars) > 1 and metavars[-1] == "...":
            kwargs.update(metavar=metavars[0], nargs="+")
        elif len(metavars) > 1:
            kwargs.update(metavar=tuple(metavars), nargs=len(metavars))
        elif metavars:
            kwargs["metavar"] = metavars[0]

        argtype = self[spec.field]
        if argtype is bool:
            action = action or "store_true"
        elif argtype is not str and len(metavars) <= 1 and not spec.is_flag:
            kwargs["type"] = argtype
        if action:
            kwargs["action"] = ACTIONS.get(action, action)
        if spec.help:
            kwargs["help"] = spec.help
        return kwargs


def add_arguments(
    parser: ArgumentParser, usage: Usage, types: ArgumentTypes
) -> ArgumentParser:
    for spec in usage.arguments:
        parser.add_argument(*spec.options, **types.kwargs(spec))
    return parser


def parser(
    usage: str,
    typed_namespace: Namespace | None = None,
    commands: Mapping[str, str] | None = None,
) -> ArgumentParser:
    """Return an `ArgumentParser` for the program described by `usage`.

    Argument types come from the annotations of `typed_namespace`. Each entry
    of `commands` (sub-command name to usage string) adds a sub-parser, and the
    chosen sub-command is stored in the `command` field of the namespace.
    """
    types = ArgumentTypes(typed_namespace)
    program = Usage.from_text(usage)
    top = ArgumentParser(
        prog=program.name, description=program.description, epilog=program.epilog
    )
    add_arguments(top, program, types)
    if commands:
        subparsers = top.add_subparsers(
            dest="command", required=True, metavar="COMMAND"
        )
        for name, text in commands.items():
            command = Usage.from_text(text)
            sub = subparsers.add_parser(
                name,
                help=command.summary,
                description=command.description,
                epilog=command.epilog,
            )
            add_arguments(sub, command, types)
    return top


def usage_fields(usages: Sequence[str]) -> List[str]:
    """The namespace fields named by the arguments of `usages`."""
    return [spec.field for text in usages for spec in Usage.from_text(text).arguments]
