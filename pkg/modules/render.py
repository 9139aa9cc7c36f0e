# -*- coding: utf-8 -*-
from __future__ import annotations

import os
from typing import Tuple

from utils.client import LabCommand, LabCore
from utils.errors import ArgumentParsingError
from utils.gridio import DEFAULT_WINDOW, load_grid, save_png
from utils.others import LabArgparse, ensure_output_dir, file_size


async def render(grid_path: str, out_path: str, window: Tuple[float, float] = DEFAULT_WINDOW) -> str:
    grid = await load_grid(grid_path)
    ensure_output_dir(os.path.dirname(os.path.abspath(out_path)))
    return await save_png(out_path, grid, window)


async def render_command(lab: LabCore, args):
    if args.window is not None:
        window = (args.window[0], args.window[1])
    else:
        window = (lab.config["RENDER_WINDOW_MIN"], lab.config["RENDER_WINDOW_MAX"])

    if not window[1] > window[0]:
        raise ArgumentParsingError(f"--window needs MIN < MAX, got {window[0]} {window[1]}")

    path = await render(args.grid, args.out, window)
    lab.log.info(f"Rendered {args.grid} -> {path} ({file_size(path)})")


def setup(lab: LabCore):
    parser = LabArgparse(prog="render")
    parser.add_argument("--grid", required=True, help="raw grid dump")
    parser.add_argument("--out", required=True, help="PNG path")
    parser.add_argument("--window", nargs=2, type=float, metavar=("MIN", "MAX"), default=None)
    lab.add_command(LabCommand("render", "grid dump to 8-bit PNG", parser, render_command))
