# -*- coding: utf-8 -*-
import asyncio
import sys
from typing import Optional, Sequence

import utils.logger
from config_loader import load_config
from utils.client import LabCore
from utils.errors import parse_error

_log = utils.logger.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        config = load_config()
    except Exception as e:
        error_txt, _, exit_code = parse_error(e)
        print(error_txt, file=sys.stderr)
        return exit_code

    utils.logger.setup_logger(config)

    lab = LabCore(config)

    try:
        lab.load_modules()
        _log.debug(f"{len(lab.commands)} commands ready")
        asyncio.run(lab.invoke(argv))
    except Exception as e:
        error_txt, full_error_txt, exit_code = parse_error(e)
        print(error_txt, file=sys.stderr)
        if full_error_txt:
            _log.error(full_error_txt)
        else:
            _log.debug(error_txt)
        return exit_code

    return 0
