"""
Coloured console logging for experiment runs.

Levels are coloured with ANSI escapes when the stream is a terminal; log
files and pipes (CSV on stdout, JSON results) stay free of escape codes.
"""

import logging
import sys

LEVEL_COLORS = [
    (logging.CRITICAL, '\x1b[31m'),  # red
    (logging.ERROR, '\x1b[31m'),  # red
    (logging.WARNING, '\x1b[33m'),  # yellow
    (logging.INFO, '\x1b[94m'),  # light blue
    (logging.DEBUG, '\x1b[32m'),  # green
]
RESET = '\x1b[0m'

# FORMAT from https://github.com/xolox/python-coloredlogs
FORMAT = '%(asctime)s %(name)s[%(process)d] %(levelname)s %(message)s'
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def color_for(levelno):
    for threshold, color in LEVEL_COLORS:
        if levelno >= threshold:
            return color
    return RESET


class ColorFormatter(logging.Formatter):
    def __init__(self, fmt=FORMAT, datefmt=DATE_FORMAT, use_color=True):
        super().__init__(fmt, datefmt)
        self.use_color = use_color

    def format(self, record):
        text = super().format(record)
        if not self.use_color:
            return text
        return '{}{}{}'.format(color_for(record.levelno), text, RESET)


def enable_color_logging(debug_lvl=logging.DEBUG, stream=None):
    """Attach one coloured handler to the root logger; progress goes to stderr."""
    stream = stream or sys.stderr
    root = logging.getLogger()
    root.setLevel(debug_lvl)
    for handler in list(root.handlers):
        if getattr(handler, "_reshuffle_color", False):
            root.removeHandler(handler)

    ch = logging.StreamHandler(stream)
    ch.setLevel(debug_lvl)
    ch.setFormatter(ColorFormatter(use_color=hasattr(stream, "isatty") and stream.isatty()))
    ch._reshuffle_color = True
    root.addHandler(ch)
    return ch
