import argparse
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

Argument = Tuple[Tuple[str, ...], Dict[str, Any]]
Handler = Callable[[argparse.Namespace], Optional[int]]


def arg(*flags: str, **kwargs: Any) -> Argument:
    return flags, kwargs


@dataclass
class Command:
    name: str
    summary: str
    handler: Handler
    arguments: List[Argument] = field(default_factory=list)


class CommandRouter:
    """Collects sub-commands of one app; main.py mounts them on the top-level parser"""

    def __init__(self):
        self.commands: List[Command] = []

    def command(self, name: str, summary: str = "", arguments: Tuple[Argument, ...] = ()):
        def decorator(func: Handler) -> Handler:
            self.commands.append(Command(name, summary, func, list(arguments)))
            return func

        return decorator

    def mount(self, subparsers) -> List[str]:
        names = []
        for cmd in self.commands:
            parser = subparsers.add_parser(cmd.name, help=cmd.summary, description=cmd.handler.__doc__)
            for flags, kwargs in cmd.arguments:
                parser.add_argument(*flags, **kwargs)
            parser.set_defaults(handler=cmd.handler)
            names.append(cmd.name)
        return names


def int_list(text: str) -> List[int]:
    """argparse type for "2,2" or "2 2" style width lists"""
    try:
        return [int(part) for part in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")
