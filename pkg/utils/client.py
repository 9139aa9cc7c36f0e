# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from importlib import import_module
from typing import Awaitable, Callable, Dict, List, Optional, Sequence

from config_loader import OUTPUT_DIR_ENV
from utils.errors import ArgumentParsingError
from utils.experiment import ExperimentSpec, read_json
from utils.others import LabArgparse

CommandCallback = Callable[["LabCore", object], Awaitable[None]]


@dataclass
class LabCommand:
    name: str
    description: str
    parser: LabArgparse
    callback: CommandCallback


class LabCore:

    def __init__(self, config: dict):
        self.config = config
        self.log = logging.getLogger("lab")
        self.commands: Dict[str, LabCommand] = {}

    @property
    def workers(self) -> int:
        return self.config["WORKERS"]

    def add_command(self, command: LabCommand):
        if command.name in self.commands:
            raise ValueError(f"command {command.name!r} registered twice")
        self.commands[command.name] = command

    def load_modules(self, modules_dir: str = "modules") -> List[str]:

        loaded = []

        base = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

        for item in os.walk(os.path.join(base, modules_dir)):
            files = sorted(filter(lambda f: f.endswith('.py') and not f.startswith('_'), item[-1]))
            for file in files:
                filename, _ = os.path.splitext(file)
                module_name = f"{modules_dir}.{filename}"
                try:
                    module = import_module(module_name)
                    module.setup(self)
                except Exception:
                    self.log.error(f"Failed to load module: {filename}")
                    raise
                self.log.debug(f"Loaded {filename}.py.")
                loaded.append(f"{filename}.py")

        return loaded

    def usage(self) -> str:
        lines = ["usage: app.py <command> [options]", "", "commands:"]
        for name in sorted(self.commands):
            lines.append(f"  {name:<18}{self.commands[name].description}")
        return "\n".join(lines)

    async def invoke(self, argv: Sequence[str]):
        if not argv:
            raise ArgumentParsingError("missing command\n" + self.usage())

        name, *rest = argv

        try:
            command = self.commands[name]
        except KeyError:
            raise ArgumentParsingError(f"unknown command {name!r}\n" + self.usage())

        args = command.parser.parse_args(rest)
        await command.callback(self, args)

    def resolve_spec(self, args) -> ExperimentSpec:
        """Experiment for a command: spec file (or testbed), then output and seed overrides.

        Output directory precedence: --out, the environment override, the spec
        file's own ``output_dir``, the configured default.
        """
        path: Optional[str] = getattr(args, "spec", None)

        if path:
            raw = read_json(path)
            spec = ExperimentSpec.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
            has_out = isinstance(raw, dict) and "output_dir" in raw
        else:
            spec = ExperimentSpec.testbed()
            has_out = False

        out = getattr(args, "out", None)
        if not out and os.environ.get(OUTPUT_DIR_ENV):
            out = os.environ[OUTPUT_DIR_ENV]
        if not out and not has_out:
            out = self.config["OUTPUT_DIR"]

        return spec.with_overrides(out=out, seed=getattr(args, "seed", None))
