"""
Custom exception classes for the pruning framework.

Provides specific exception types for the failure scenarios of training,
pruning, profile search and the CLI harness, with helpful error messages
and resolution guidance.
"""


class PruningError(Exception):
    """
    Base exception for all framework errors.

    Attributes:
        message: Error message
        details: Structured context (layer names, shapes, values) if available
    """

    exit_code = 1

    def __init__(self, message, details=None):
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __str__(self):
        if self.details:
            context = ", ".join(f"{key}={value}" for key, value in self.details.items())
            return f"{self.message} [{context}]"
        return self.message


class ConfigurationError(PruningError):
    """
    Configuration is invalid or incomplete.

    Raised for bad experiment configs, empty data splits, out-of-range
    generator parameters and missing files.
    """

    exit_code = 2

    def __init__(self, message=None, field=None, details=None):
        self.field = field

        if not message:
            message = "Configuration is invalid."
            if field:
                message += f" Check the value of '{field}'."

        details = dict(details or {})
        if field:
            details.setdefault("field", field)
        super().__init__(message, details)


class ShapeMismatchError(PruningError):
    """
    A tensor does not have the shape a layer declares.

    Attributes:
        layer: Name of the offending layer
        expected: Expected shape
        got: Actual shape
    """

    def __init__(self, layer, expected=None, got=None, message=None):
        self.layer = layer
        self.expected = expected
        self.got = got

        if not message:
            message = f"Shape mismatch at layer '{layer}'."
            if expected is not None and got is not None:
                message += f" Expected {tuple(expected)}, got {tuple(got)}."

        super().__init__(message, {"layer": layer})


class NumericInstabilityError(PruningError):
    """
    A loss, gradient or weight became NaN or infinite.

    Raised by the forward pass, the trainer and the PPO learner. Usually a
    learning rate that is too high for the pruned network.
    """

    exit_code = 3

    def __init__(self, where, value=None, message=None, diagnostics=None):
        self.where = where
        self.value = value
        self.diagnostics = diagnostics or {}

        if not message:
            message = f"Non-finite value detected in {where}."
            if value is not None:
                message += f" Value: {value}."
            message += (
                "\n\nPossible solutions:\n"
                "- Lower the learning rate\n"
                "- Increase the batch size\n"
                "- Check the input data for NaN/Inf entries"
            )

        super().__init__(message, dict(self.diagnostics))


class UsageError(PruningError):
    """
    An API was called out of order.

    For example backward before forward, or stepping an environment whose
    episode has already ended.
    """


class MaskLengthError(PruningError):
    """
    A Boolean mask does not match the length of the flag it is bound to.
    """

    def __init__(self, flag, expected, got, message=None):
        self.flag = flag
        self.expected = expected
        self.got = got

        if not message:
            message = (
                f"Mask for flag '{flag}' has length {got}, "
                f"but the architecture declares {expected} channels."
            )

        super().__init__(message, {"flag": flag})


class TopologyError(PruningError):
    """
    A MaskSet violates the flag topology of a network.

    Raised when both operands of a residual add do not carry the same
    retained-channel index set.
    """

    def __init__(self, block, message=None):
        self.block = block

        if not message:
            message = (
                f"Residual add in block '{block}' receives operands with "
                "different retained channels. Both operands must be governed "
                "by the same flag."
            )

        super().__init__(message, {"block": block})


class InfeasibleTargetError(PruningError):
    """
    A compression target cannot be reached within the retention bounds.

    Attributes:
        target: Requested compression factor
        achievable: (low, high) compression factors the family can reach
    """

    exit_code = 2

    def __init__(self, target, achievable=None, message=None):
        self.target = target
        self.achievable = achievable

        if not message:
            message = f"Compression factor {target:.4g} is not reachable."
            if achievable:
                low, high = achievable
                message += f"\n\nAchievable range: [{low:.4g}, {high:.4g}]"
            message += (
                "\n\nEvery retention fraction is bounded below by 0.1 and "
                "channel counts are integers."
            )

        super().__init__(message, {"target": target})


class ArchitectureMismatchError(PruningError):
    """
    A profile, policy or checkpoint was made for a different architecture.
    """

    def __init__(self, expected, got, message=None):
        self.expected = expected
        self.got = got

        if not message:
            message = (
                f"Architecture mismatch: expected '{expected}', got '{got}'.\n\n"
                "Profiles and policies only transfer between networks of the "
                "same architecture and width."
            )

        super().__init__(message)


class DatasetFormatError(PruningError):
    """
    Dataset file is malformed.

    Raised for CIFAR-10 binary files whose size is not a multiple of the
    record length, and for labels outside the class range.
    """

    exit_code = 2

    def __init__(self, path=None, message=None):
        self.path = path

        if not message:
            message = "Dataset file is malformed."
            if path:
                message = f"Dataset file '{path}' is malformed."
            message += (
                "\n\nExpected the CIFAR-10 binary layout: one label byte "
                "followed by 3072 pixel bytes per record."
            )

        super().__init__(message)


class CheckpointFormatError(PruningError):
    """
    Checkpoint file has a wrong magic number, version or truncated payload.
    """

    exit_code = 2

    def __init__(self, path=None, message=None):
        self.path = path

        if not message:
            message = "Checkpoint file is not a valid container."
            if path:
                message = f"Checkpoint file '{path}' is not a valid container."

        super().__init__(message)


def exit_code_for(error):
    """
    Map an exception to the CLI exit code.

    Args:
        error: Exception raised by a CLI verb

    Returns:
        0 never (errors only), 2 for configuration errors, 3 for numeric
        failures and 1 for anything else
    """
    if isinstance(error, PruningError):
        return error.exit_code
    if isinstance(error, (ValueError, FileNotFoundError)):
        return ConfigurationError.exit_code
    if isinstance(error, FloatingPointError):
        return NumericInstabilityError.exit_code
    return 1
