"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: ``InputError`` -> 2,
``DivergedTrainingError`` -> 3, anything else -> 1.
"""


class InputError(ValueError):
    """Malformed or out-of-contract user input (files, parameters)."""


class DivergedTrainingError(ArithmeticError):
    """A training loop produced a non-finite loss or activation."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
