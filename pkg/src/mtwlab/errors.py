"""Exception hierarchy shared across the package."""


class MTWLabError(Exception):
    """Base class for all package-specific errors."""


# --- cost model / derivatives ---

class OutOfDomain(MTWLabError):
    pass


class SingularMixedHessian(MTWLabError):
    pass


class SegmentEscapesDomain(MTWLabError):
    pass


class FiniteDifferenceUnstable(MTWLabError):
    pass


class InsufficientNullSamples(MTWLabError):
    pass


# --- charts ---

class NewtonDiverged(MTWLabError):
    pass


class SolutionOutsideU(MTWLabError):
    pass


class ExtrapolationRequested(MTWLabError):
    pass


class SingularAffineMap(MTWLabError):
    pass


# --- transport ---

class Infeasible(MTWLabError):
    pass


class SolverStalled(MTWLabError):
    pass


class DegenerateHull(MTWLabError):
    pass


# --- convex geometry ---

class DegenerateBody(MTWLabError):
    pass


class NotWellCentered(MTWLabError):
    pass


class NoWitnessFound(MTWLabError):
    pass


class EmptySlice(MTWLabError):
    pass


# --- estimates / sections ---

class ShrinkTau(MTWLabError):
    pass


class EmptySection(MTWLabError):
    pass


class PreconditionUnverifiable(MTWLabError):
    pass


class PointNotOnDilatedBoundary(MTWLabError):
    pass


class ConstraintInfeasible(MTWLabError):
    pass


class HullDegenerate(MTWLabError):
    pass


class DiameterTooLarge(MTWLabError):
    pass


class ZeroGradient(MTWLabError):
    pass


# --- regularity ---

class NoAdmissiblePairs(MTWLabError):
    pass


class InsufficientScales(MTWLabError):
    pass


# --- cli ---

class ConfigError(MTWLabError):
    pass


class MissingArtifacts(MTWLabError):
    pass
