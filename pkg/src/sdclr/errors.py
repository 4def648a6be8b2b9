"""Exception types shared across the package."""


class SdclrError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(SdclrError, ValueError):
    """A dataset or profile specification is malformed."""


class InvalidParameterError(SdclrError, ValueError):
    """A numeric parameter is outside its legal range."""


class CapacityError(SdclrError):
    """A source dataset cannot supply the requested per-class counts."""

    def __init__(self, class_id, requested, available):
        self.class_id = int(class_id)
        self.requested = int(requested)
        self.available = int(available)
        super().__init__(
            f"class {class_id}: requested {requested} samples "
            f"but only {available} available"
        )


class ContractError(SdclrError):
    """Shapes or keys passed to an operation violate its contract."""


class ConfigError(SdclrError, ValueError):
    """An experiment config file is invalid. The message names the field."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class DataError(SdclrError):
    """A source dataset is missing or unreadable."""


class TrainingDiverged(SdclrError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, step, loss, grad_norms):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        self.grad_norms = grad_norms
        top = sorted(grad_norms.items(), key=lambda kv: -kv[1])[:5]
        super().__init__(
            f"non-finite loss at epoch {epoch} step {step}: loss={loss!r}, "
            f"largest grad norms: {top}"
        )
