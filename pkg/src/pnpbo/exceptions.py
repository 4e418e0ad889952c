"""Exception types raised across the package."""


class DivergedError(FloatingPointError):
    """A solver estimate or iterate became non-finite.

    ``trace`` carries whatever was recorded before the failure so that grid
    searches can log the partial run and move on.
    """

    def __init__(self, iteration, channel=None, trace=None):
        self.iteration = iteration
        self.channel = channel
        self.trace = trace
        where = f" in channel {channel!r}" if channel else ""
        super().__init__(f"non-finite value{where} at iteration {iteration}")


class NoConvergenceError(RuntimeError):
    """An inner solve hit its iteration budget before reaching tolerance."""

    def __init__(self, what, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"{what} did not converge in {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class EstimatorStateError(RuntimeError):
    """An estimator was asked for an estimate before being initialised."""


class ParseError(ValueError):
    """Malformed dataset or configuration input.

    ``line`` is 1-based when known; ``offset`` is a byte offset for binary
    formats.
    """

    def __init__(self, message, *, path=None, line=None, column=None, offset=None):
        self.path = path
        self.line = line
        self.column = column
        self.offset = offset
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if offset is not None:
            loc.append(f"offset {offset}")
        prefix = ", ".join(loc)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class InfeasibleError(ValueError):
    """No step sizes satisfy the certificate; ``certificate`` shows why."""

    def __init__(self, message, certificate=None):
        self.certificate = certificate
        super().__init__(message)
