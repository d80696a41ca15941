"""Exception hierarchy shared by all vdkflow modules."""


class VdkflowError(Exception):
    """Base class; ``to_dict`` feeds the CLI's machine-readable error output."""

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


# -- grid ---------------------------------------------------------------------


class CaseFormatError(VdkflowError):
    pass


class MissingBlock(CaseFormatError):
    def __init__(self, name):
        super().__init__(f"case text has no mpc.{name} block")
        self.name = name


class MalformedRow(CaseFormatError):
    def __init__(self, block, line, reason=""):
        msg = f"malformed row {line} in mpc.{block}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.block = block
        self.line = line


class MultipleSlack(CaseFormatError):
    pass


class NoSlack(CaseFormatError):
    pass


class DisconnectedGraph(CaseFormatError):
    pass


class ZeroImpedanceBranch(CaseFormatError):
    def __init__(self, from_bus, to_bus):
        super().__init__(f"branch {from_bus}-{to_bus} has r = x = 0")
        self.from_bus = from_bus
        self.to_bus = to_bus


class IndexOutOfRange(VdkflowError, IndexError):
    pass


# -- numerics -----------------------------------------------------------------


class DimensionMismatch(VdkflowError, ValueError):
    pass


class LengthMismatch(VdkflowError, ValueError):
    pass


class EmptyInput(VdkflowError, ValueError):
    pass


# -- acpf ---------------------------------------------------------------------


class NonConvergence(VdkflowError):
    def __init__(self, iterations, mismatch):
        super().__init__(
            f"Newton-Raphson did not converge after {iterations} iterations "
            f"(max mismatch {mismatch:.3e} pu)"
        )
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobian(VdkflowError):
    def __init__(self, iteration):
        super().__init__(f"singular power-flow Jacobian at iteration {iteration}")
        self.iteration = iteration


class NoLoadBuses(VdkflowError):
    pass


class TooManyFailures(VdkflowError):
    pass


# -- kernels / gp / al / bench ------------------------------------------------


class DepthOutOfRange(VdkflowError, ValueError):
    pass


class CholeskyFailure(VdkflowError):
    pass


class NonFiniteGradient(VdkflowError):
    pass


class UnreachableBuses(VdkflowError):
    pass


class DegenerateDensity(VdkflowError):
    pass


class TrialError(VdkflowError):
    def __init__(self, trial, cause):
        super().__init__(f"trial {trial} failed: {cause!r}")
        self.trial = trial
        self.cause = cause
