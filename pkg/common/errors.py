from typing import Optional


class EnFormerError(Exception):
    """Base class for every error this repo raises on purpose."""

    category = "runtime"


class ConfigError(EnFormerError, ValueError):
    category = "config"


class ConfigMismatchError(ConfigError):
    """Checkpoint was written under a different config hash."""


class RegistryError(EnFormerError, ValueError):
    category = "registry"

    def __init__(self, kind: str, name: str, valid):
        self.kind = kind
        self.name = name
        self.valid = sorted(valid)
        super().__init__(f"Unknown {kind}: {name!r}. Valid names: {', '.join(self.valid)}")


class BackboneUnavailableError(EnFormerError, ValueError):
    category = "registry"


class ShapeError(EnFormerError, ValueError):
    category = "shape"


class DataError(EnFormerError, ValueError):
    category = "data"


class IntegrityError(EnFormerError, RuntimeError):
    category = "integrity"


class NonFiniteLossError(EnFormerError, RuntimeError):
    category = "numeric"

    def __init__(self, batch_id: int, value: Optional[float] = None):
        self.batch_id = batch_id
        super().__init__(f"Non-finite loss {value} at batch {batch_id}")


EXIT_CODES = {
    "config": 2,
    "registry": 3,
    "data": 4,
    "integrity": 5,
    "shape": 6,
    "numeric": 7,
    "runtime": 1,
}
