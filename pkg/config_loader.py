# -*- coding: utf-8 -*-
from os import environ

import orjson
from dotenv import dotenv_values

from utils.errors import ConfigError

bools = {
    "true": True,
    "false": False,
    "1": True,
    "0": False,
}

DEFAULT_CONFIG = {
    ##############
    ### Output ###
    ##############
    "OUTPUT_DIR": "runs",
    "RENDER_WINDOW_MIN": -3.0,
    "RENDER_WINDOW_MAX": 3.0,

    ###############
    ### Logging ###
    ###############
    "LOG_DIR": ".logs",
    "ENABLE_FILE_LOG": True,
    "LOG_LEVEL": "INFO",

    ###################
    ### Computation ###
    ###################
    "WORKERS": 4,
    "ATTENTION_CHUNK": 256,
}

# the only environment variable honoured
OUTPUT_DIR_ENV = "EXTRAFLOW_OUTPUT_DIR"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def load_config(config_path: str = "config.json", env_file: str = ".env") -> dict:

    CONFIG = dict(DEFAULT_CONFIG)

    try:
        with open(config_path, "rb") as f:
            data = orjson.loads(f.read())
    except FileNotFoundError:
        data = {}
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"{config_path} is not valid JSON: {e}")

    if not isinstance(data, dict):
        raise ConfigError(f"{config_path} must hold a JSON object")

    CONFIG.update(data)

    try:
        CONFIG.update({k: v for k, v in dotenv_values(env_file).items() if v is not None})
    except FileNotFoundError:
        pass

    if environ.get(OUTPUT_DIR_ENV):
        CONFIG["OUTPUT_DIR"] = environ[OUTPUT_DIR_ENV]

    unknown = set(CONFIG) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

    for i in [
        "WORKERS",
        "ATTENTION_CHUNK",
    ]:
        try:
            CONFIG[i] = int(CONFIG[i])
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid configuration value! {i}: {CONFIG[i]}")

    for i in [
        "RENDER_WINDOW_MIN",
        "RENDER_WINDOW_MAX",
    ]:
        try:
            CONFIG[i] = float(CONFIG[i])
        except (TypeError, ValueError):
            raise ConfigError(f"Invalid configuration value! {i}: {CONFIG[i]}")

    for i in [
        "ENABLE_FILE_LOG",
    ]:
        if CONFIG[i] in (True, False):
            continue

        try:
            CONFIG[i] = bools[str(CONFIG[i]).lower()]
        except KeyError:
            raise ConfigError(f"Invalid configuration value! {i}: {CONFIG[i]}")

    CONFIG["LOG_LEVEL"] = str(CONFIG["LOG_LEVEL"]).upper()
    if CONFIG["LOG_LEVEL"] not in LOG_LEVELS:
        raise ConfigError(f"Invalid configuration value! LOG_LEVEL: {CONFIG['LOG_LEVEL']}")

    if CONFIG["RENDER_WINDOW_MAX"] <= CONFIG["RENDER_WINDOW_MIN"]:
        raise ConfigError("RENDER_WINDOW_MAX must be greater than RENDER_WINDOW_MIN")

    if CONFIG["WORKERS"] < 1:
        CONFIG["WORKERS"] = 1

    if CONFIG["ATTENTION_CHUNK"] < 16:
        CONFIG["ATTENTION_CHUNK"] = 16

    return CONFIG
