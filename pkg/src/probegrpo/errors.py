"""Shared exception types.

Bad arguments raise plain ValueError at the call site. StateError is for
conditions the caller cannot fix by changing arguments, such as non-finite
parameters or a training step that produced a non-finite gradient.
"""


class StateError(RuntimeError):
    """Invalid internal state (non-finite parameters, broken run, ...)."""
