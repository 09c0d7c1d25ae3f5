"""
Exception hierarchy for martnorm services.

Services raise these; the CLI turns them into exit code 1 and the HTTP layer
into a 422 response.
"""

from typing import Any, Optional


class MartnormError(Exception):
    """Base class for every computation error raised by the services"""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ModelValidationError(MartnormError):
    """Raised when a model document violates the filtration invariants"""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message)
        self.report = report


class TimesNotOrderedError(MartnormError):
    def __init__(self, message: str = "times not ordered"):
        super().__init__(message)


class EnumerationTooLargeError(MartnormError):
    def __init__(self, count: int, cap: int, advice: str = "use the greedy strategy"):
        super().__init__(f"enumeration too large: {count} exceeds cap {cap}; {advice}")
        self.count = count
        self.cap = cap


class NotAMartingaleError(MartnormError):
    def __init__(self, node: str, drift: float):
        super().__init__(f"not a martingale: drift {drift:.3e} at node {node}")
        self.node = node
        self.drift = drift


class BarriersCrossedError(MartnormError):
    def __init__(self, node: str):
        super().__init__(f"barriers crossed at node {node}")
        self.node = node


class TerminalOutsideBarriersError(MartnormError):
    def __init__(self, node: str):
        super().__init__(f"terminal value outside barriers at node {node}")
        self.node = node


class DriverDivergedError(MartnormError):
    def __init__(self, node: str, iterations: int):
        super().__init__(f"driver iteration diverged at node {node} after {iterations} iterations")
        self.node = node


class NotInFamilyError(MartnormError):
    pass


class NotInSliceError(MartnormError):
    def __init__(self, node: str):
        super().__init__(f"not in 𝒫(τ,ℙ): measures disagree before the cut at node {node}")
        self.node = node


class NoAdmissibleProcessError(MartnormError):
    pass


class MalformedReportError(MartnormError):
    pass


class SuiteConfigError(MartnormError):
    pass


class DriverLipschitzError(MartnormError):
    def __init__(self, driver: str, lipschitz: float):
        super().__init__(f"driver {driver} breaks its declared Lipschitz constant {lipschitz}")
        self.lipschitz = lipschitz


class NotMonotoneError(MartnormError):
    def __init__(self, message: str = "predictable part is not monotone"):
        super().__init__(message)
