import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Generic, Optional, TypeVar, Union

import pandas as pd

from ..manifest import Manifest, package_versions

logger = logging.getLogger(__name__)

ConfigType = TypeVar("ConfigType")

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.17g"


@contextmanager
def output_scope(out_dir, command: str, seed: Optional[int] = None, config: Optional[dict] = None):
    """Provide an output directory whose manifest is written however the command ends.

    Args:
        out_dir (str or Path): Output directory, created if needed.
        command (str): Subcommand name.
        seed (int, optional): Root seed.
        config (dict, optional): Run configuration.

    Yields:
        Tuple[Path, Manifest]: The directory and the manifest to record outputs in.

    Raises:
        Exception: Any exception raised by the command, after the manifest
            has been written with status "failed".
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(command, seed, config or {}, package_versions())
    try:
        yield out_dir, manifest
        manifest.status = "complete"
    except BaseException:
        manifest.status = "failed"
        raise
    finally:
        manifest.outputs = sorted(set(manifest.outputs))
        manifest.to_json(out_dir / MANIFEST_NAME)
        logger.info("%s %s: wrote %d files to %s", command, manifest.status, len(manifest.outputs), out_dir)


class CommandBase(Generic[ConfigType]):
    """A pipeline stage writing into a manifest-scoped output directory.

    Args:
        name (str): Subcommand name recorded in the manifest.
    """

    def __init__(self, name: str):
        self.name = name

    def scope(self, out_dir, seed: Optional[int] = None, config=None, command: Optional[str] = None):
        if hasattr(config, "model_dump"):
            config = config.model_dump()
        return output_scope(out_dir, command or self.name, seed, config)

    @staticmethod
    def write_frame(manifest: Manifest, out_dir: Path, name: str, frame: pd.DataFrame) -> Path:
        """
        Write a DataFrame as CSV with round-trip float precision and record it.

        Args:
            manifest (Manifest): Manifest of the running command.
            out_dir (Path): Output directory.
            name (str): File name.
            frame (pd.DataFrame): The table.

        Returns:
            Path: The written file.
        """
        path = out_dir / name
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        manifest.outputs.append(name)
        return path

    @staticmethod
    def record(manifest: Manifest, *paths: Union[str, Path]) -> None:
        manifest.outputs.extend(Path(path).name for path in paths)

    @staticmethod
    def write_json(manifest: Manifest, out_dir: Path, name: str, data: dict) -> Path:
        path = out_dir / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        manifest.outputs.append(name)
        return path
