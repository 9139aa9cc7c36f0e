#########################################################
# Console + session-file logging for the lab.
# setup_logger() is called once from main.py.
#########################################################

from logging import Filter, StreamHandler, INFO, ERROR, Formatter, WARNING, FileHandler, DEBUG, getLogger, getLevelName
from os import makedirs, path
from sys import stdout, stderr
from typing import Optional

from colorama import Fore, Style, init

getLogger("asyncio").disabled = True


class SpectificLevelFilter(Filter):
    ## Passes records of exactly one level
    def __init__(self, level: int):
        super().__init__()
        self.level = level

    def filter(self, record) -> bool:
        return record.levelno == self.level

## Format (console only)
INFO_FORMAT = f"{Style.DIM}[%(asctime)s]{Style.RESET_ALL} [%(name)s:%(lineno)d] {Fore.GREEN}[%(levelname)s] - {Fore.CYAN}%(message)s{Style.RESET_ALL}"
WARNING_FORMAT = f"{Style.DIM}[%(asctime)s]{Style.RESET_ALL} [%(name)s:%(lineno)d] {Fore.YELLOW}[%(levelname)s] - {Fore.LIGHTBLUE_EX}%(message)s{Style.RESET_ALL}"
ERROR_FORMAT = f"{Style.DIM}[%(asctime)s]{Style.RESET_ALL} [%(name)s:%(lineno)d] {Fore.RED}[%(levelname)s] - {Fore.LIGHTRED_EX}%(message)s{Style.RESET_ALL}"
DEBUG_FORMAT = f"{Style.DIM}[%(asctime)s]{Style.RESET_ALL} [%(name)s:%(lineno)d] [%(funcName)s] {Fore.BLUE}[%(levelname)s] - %(message)s{Style.RESET_ALL}"
FILE_FORMAT = "%(asctime)s %(name)s:%(lineno)d [%(levelname)s] - %(message)s"

DATEFMT = "%d-%m-%Y %H:%M:%S"

_handlers = []


def _level_handler(level: int, stream, fmt: str) -> StreamHandler:
    handler = StreamHandler(stream=stream)
    handler.setLevel(level)
    handler.addFilter(SpectificLevelFilter(level))
    handler.setFormatter(Formatter(fmt, datefmt=DATEFMT))
    return handler


def setup_logger(config: Optional[dict] = None):
    config = config or {}
    init(autoreset=True)

    root = getLogger()
    for handler in _handlers:
        root.removeHandler(handler)
        handler.close()
    _handlers.clear()

    _handlers.extend([
        _level_handler(INFO, stdout, INFO_FORMAT),
        _level_handler(WARNING, stdout, WARNING_FORMAT),
        _level_handler(ERROR, stderr, ERROR_FORMAT),
        _level_handler(DEBUG, stderr, DEBUG_FORMAT),
    ])

    if config.get("ENABLE_FILE_LOG", True):
        log_dir = config.get("LOG_DIR", ".logs")
        makedirs(log_dir, exist_ok=True)
        fileHandler = FileHandler(path.join(log_dir, "SessionLog.log"), mode="w", encoding="utf-8")
        fileHandler.setLevel(DEBUG)
        fileHandler.setFormatter(Formatter(FILE_FORMAT, datefmt=DATEFMT))
        _handlers.append(fileHandler)

    for handler in _handlers:
        root.addHandler(handler)

    root.setLevel(getLevelName(config.get("LOG_LEVEL", "INFO")))
