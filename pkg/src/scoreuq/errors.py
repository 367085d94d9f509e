"""Exception types; the CLI maps each to a distinct exit code."""


class ScoreUQError(Exception):
    exit_code = 2


class ConfigError(ScoreUQError, ValueError):
    """Invalid configuration or precondition violation."""

    exit_code = 1


class NumericError(ScoreUQError, ArithmeticError):
    """Non-finite values or a failed numeric procedure."""

    exit_code = 2


class StorageError(ScoreUQError, OSError):
    """Malformed file contents or failed I/O."""

    exit_code = 3


class HookError(ScoreUQError, RuntimeError):
    """A sampler hook raised; carries the step index where it happened."""

    exit_code = 2

    def __init__(self, step, timestep, cause):
        super().__init__(f"hook failed at step {step} (t={timestep}): {cause!r}")
        self.step = step
        self.timestep = timestep
