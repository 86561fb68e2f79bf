"""Exception hierarchy for noveltyswarm.

Every error carries the process exit code the CLI should use for it.
"""

from typing import Iterable, Optional


class NoveltySwarmError(Exception):
    """Base class for all package errors"""

    exit_code = 2


class ConfigurationError(NoveltySwarmError, ValueError):
    """Invalid configuration or inputs that contradict the configuration"""

    exit_code = 1

    def __init__(self, message: str, fields: Optional[Iterable[str]] = None):
        self.fields = list(fields or [])
        if self.fields:
            message = message + ": " + "; ".join(self.fields)
        super().__init__(message)


class ConfigMismatchError(ConfigurationError):
    """A resume was attempted with a config whose hash changed"""


class RunIncompleteError(NoveltySwarmError):
    """Requested artifacts do not exist yet"""

    exit_code = 2
