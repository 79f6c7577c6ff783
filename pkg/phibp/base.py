import json
from os.path import isfile

import numpy as np


def keyvalgen(obj):
    """Generate attribute name/value pairs, summarizing array-valued attributes.

    Args:
        obj: The object to generate attribute name/value pairs from.

    Yields:
        Tuple[str, Any]: The attribute name/value pairs.

    """
    for k, v in vars(obj).items():
        if k.startswith("_"):
            continue
        if isinstance(v, np.ndarray):
            v = f"array(shape={v.shape}, dtype={v.dtype})"
        elif isinstance(v, (list, tuple)) and len(v) > 6:
            v = f"{type(v).__name__}(len={len(v)})"
        yield k, v


class CustomBase:
    """Mixin giving domain records a compact repr and schema-driven JSON I/O.

    Subclasses name their marshmallow schema in `__schema__`; the schema is
    looked up lazily in `phibp.schemas`.
    """

    __schema__ = None

    def __repr__(self):
        """Return a string representation of the object.

        Returns:
            str: The string representation of the object.

        """
        params = ", ".join(f"{k}={v}" for k, v in keyvalgen(self))
        return f"{self.__class__.__name__}({params})"

    @classmethod
    def _schema(cls):
        from . import schemas

        if cls.__schema__ is None:
            raise TypeError(f"{cls.__name__} has no serialization schema")
        return getattr(schemas, cls.__schema__)()

    @classmethod
    def from_dict(cls, data):
        """
        Create an object from a dictionary.

        Args:
            data (dict): The dictionary produced by `to_dict`.

        Returns:
            The created object.
        """
        return cls._schema().load(data)

    @classmethod
    def from_json(cls, string_or_path_to_file):
        """
        Create an object from a JSON string or file.

        Args:
            string_or_path_to_file (str): JSON string or path to the JSON file.

        Returns:
            The created object.
        """
        if isfile(str(string_or_path_to_file)):
            with open(string_or_path_to_file, "r", encoding="utf-8") as file:
                data = json.load(file)
        else:
            data = json.loads(string_or_path_to_file)
        return cls.from_dict(data)

    def to_dict(self):
        return self._schema().dump(self)

    def to_json(self, path_to_file):
        """
        Serialize the object to a JSON file.

        Args:
            path_to_file (str): Path to the output JSON file. If equal to "str",
                return instead the string that would have been written to the file.

        Returns:
            str or None: The JSON string when `path_to_file` is "str".
        """
        out = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path_to_file == "str":
            return out

        with open(path_to_file, "w", encoding="utf-8") as file:
            file.write(out + "\n")
