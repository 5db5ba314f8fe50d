"""Python bindings for the vbt lab core."""

import json

from ._core import *  # noqa: F401,F403
from ._core import default_experiment_json as _default_experiment_json


def default_experiment() -> dict:
    return json.loads(_default_experiment_json())
