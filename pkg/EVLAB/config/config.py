"""The configuration parser for the EVLAB project."""

import configparser
import importlib.resources as pkg_resources
import os
import shutil


def _ensure_user_config() -> str:
    """Ensure the user configuration file exists and return its path."""
    user_config_path = os.path.expanduser("~/.EVLAB/config.ini")
    if not os.path.exists(user_config_path):
        os.makedirs(os.path.dirname(user_config_path), exist_ok=True)
        default_config_path = pkg_resources.files("EVLAB.config").joinpath("default_config.ini")
        shutil.copy(str(default_config_path), user_config_path)
    return user_config_path


def _get_config_parser() -> configparser.ConfigParser:
    """Get the configuration parser for the EVLAB project.

    The packaged defaults are read first and the user's ``~/.EVLAB/config.ini`` is layered on top,
    so a user file written by an older release still yields every section.

    Returns:
        configparser.ConfigParser: The configuration parser with the merged settings.
    """
    config_parser = configparser.ConfigParser()
    default_config_path = pkg_resources.files("EVLAB.config").joinpath("default_config.ini")
    config_parser.read_string(default_config_path.read_text())
    try:
        user_config_path = _ensure_user_config()
    except OSError:
        # read-only home directories fall back to the packaged defaults
        return config_parser
    with open(user_config_path) as file:
        config_parser.read_file(file)
    return config_parser


def worker_count() -> int:
    """Number of worker threads allowed by ``EVERETT_LAB_THREADS`` (0 or unset means automatic)."""
    raw = os.environ.get("EVERETT_LAB_THREADS", "0").strip() or "0"
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    if requested <= 0:
        return max(1, min(4, os.cpu_count() or 1))
    return requested


CONFIG_PARSER = _get_config_parser()
