from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from typing import List, Optional

import numpy as np
import pandas as pd
import scipy

from .base import CustomBase


@dataclass(repr=False)
class Manifest(CustomBase):
    """What a command ran with and what it wrote.

    Attributes:
        command (str): Subcommand name.
        seed (int, optional): Root seed of all randomness.
        config (dict): The validated run configuration.
        versions (dict): Versions of phibp and its numerical stack.
        outputs (list of str): Written files, relative to the output directory.
        status (str): "running", "complete" or "failed".
    """

    __schema__ = "ManifestSchema"

    command: str
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    status: str = "running"


def package_versions() -> dict:
    try:
        phibp_version = version("phibp")
    except PackageNotFoundError:
        phibp_version = "unknown"
    return {
        "phibp": phibp_version,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }

