from __future__ import annotations

import argparse
from dataclasses import dataclass, field
from typing import Any, Callable

Handler = Callable[[argparse.Namespace], int]


@dataclass
class Command:
    name: str
    help: str
    handler: Handler
    arguments: list[tuple[tuple[str, ...], dict[str, Any]]] = field(default_factory=list)


def argument(*flags: str, **kwargs: Any) -> Callable[[Handler], Handler]:
    """Attach an argparse argument to a command handler (decorators apply bottom-up)."""
    def decorate(handler: Handler) -> Handler:
        handler.__dict__.setdefault("cli_arguments", []).insert(0, (flags, kwargs))
        return handler
    return decorate


class CommandRouter:
    """Groups subcommands the way an API router groups endpoints."""

    def __init__(self) -> None:
        self.commands: list[Command] = []

    def command(self, name: str, help: str = "") -> Callable[[Handler], Handler]:
        def decorate(handler: Handler) -> Handler:
            self.commands.append(Command(name, help, handler, list(getattr(handler, "cli_arguments", []))))
            return handler
        return decorate

    def include_router(self, router: "CommandRouter") -> None:
        self.commands.extend(router.commands)

    def mount(self, subparsers, parents: list[argparse.ArgumentParser]) -> None:
        for command in self.commands:
            sub = subparsers.add_parser(command.name, help=command.help, parents=parents)
            for flags, kwargs in command.arguments:
                sub.add_argument(*flags, **kwargs)
            sub.set_defaults(handler=command.handler)
