"""Exception hierarchy shared by the parser, solver and analysis code."""


class MirrorsimError(Exception):
    """Base class for every error raised by mirrorsim.

    ``context`` collects where the failure happened (sweep value, frequency,
    ...) as an error propagates up through the experiment runner.
    """

    context: dict = {}

    def add_context(self, **items):
        self.context = {**items, **self.context}
        return self


class NetlistError(MirrorsimError, ValueError):
    """Syntax or semantic problem in a netlist.

    ``line`` is the 1-based source line when the problem can be pinned to one.
    """

    def __init__(self, message, line=None):
        self.line = line
        self.reason = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(NetlistError):
    """A parsed circuit violates a topology or parameter-range invariant."""

    def __init__(self, message, device=None, parameter=None):
        self.device = device
        self.parameter = parameter
        super().__init__(message)


class ConvergenceError(MirrorsimError):
    """Newton-Raphson failed to converge, including after all fallbacks."""

    def __init__(self, message, residual=None, iterations=None, time=None):
        self.residual = residual
        self.iterations = iterations
        self.time = time
        super().__init__(message)


class SingularCircuitError(MirrorsimError):
    """The MNA matrix is singular (voltage-source loop, isolated node, ...)."""


class AnalysisError(MirrorsimError, ValueError):
    """Post-processing was asked for something its inputs cannot support."""


class UndefinedTHDError(AnalysisError):
    """The fundamental is absent, so THD has no meaning."""
