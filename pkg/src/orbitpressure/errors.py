"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class OrbitEscaped(ToolkitError):
    """An iterate left the system domain.

    Carries ``escape_index``, the first k with f^k(x) outside the domain.
    """

    def __init__(self, escape_index, point=None):
        self.escape_index = int(escape_index)
        self.point = point
        super().__init__(f"orbit left the domain at step {escape_index}")


class IndexOutOfRange(ToolkitError, IndexError):
    """A Birkhoff-sum horizon exceeds the stored orbit length."""


class DegenerateCocycle(ToolkitError):
    """A derivative product collapsed (zero determinant or underflow)."""


class DegenerateSplitting(ToolkitError):
    """Computed splitting has no usable hyperbolicity (near-zero exponent)."""


class EmptySample(ToolkitError, ValueError):
    """An operation that needs at least one sample point got none."""


class EmptySet(ToolkitError, ValueError):
    """An operation that needs a nonempty point set got none."""


class BankMismatch(ToolkitError, ValueError):
    """Two measures were built against different test-function banks."""


class CoverageUnreachable(ToolkitError):
    """Greedy ball cover cannot reach the requested sample mass."""


class NoViableRectangle(ToolkitError):
    """No rectangle retains any branch after separation."""


class InfeasiblePeriod(ToolkitError):
    """No word length is compatible with the requested total period."""


class MissingOrbitContext(ToolkitError):
    """A shadowing check needs cached branch orbits that are not available."""


class CertificateNegative(ToolkitError):
    """A potential failed the hyperbolicity certificate on the given family."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"certificate gap {report.gap:.6g} is not positive")


class BadConfig(ToolkitError, ValueError):
    """A run configuration is malformed or violates its schema."""
