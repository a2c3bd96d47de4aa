"""Exception types shared across the package."""


class BohmlabError(Exception):
    """Base class for all package-specific errors."""


class SigmaUnderresolved(BohmlabError):
    """Gaussian width too small for the grid spacing."""


class EdgeOverlap(BohmlabError):
    """Packet support reaches the grid edges."""


class AllNodes(BohmlabError):
    """Every grid point is below the node threshold."""


class StepTooLarge(BohmlabError):
    """Time step does not resolve the fastest retained phase."""


class ZeroForce(BohmlabError):
    """Potential has vanishing first derivative on the region."""


class OutOfDomain(BohmlabError):
    """Position outside the grid domain."""


class NearNode(BohmlabError):
    """Evaluation requested inside a masked node segment."""


class ZeroKineticEnergy(BohmlabError):
    """de Broglie wavelength undefined for a state with no kinetic energy."""


class MissingLo(BohmlabError):
    """Quadratic potential (L = inf) requires an explicit reference length."""


class TooManyFlagged(BohmlabError):
    """Too few unflagged trajectories for deviation statistics."""


class NotLocalPlaneWave(BohmlabError):
    """Packet decomposition requested for a non local-plane-wave state."""


class NonFreePotential(BohmlabError):
    """Free-evolution asymptotics requested with a nonzero potential."""


class ParticleInGap(BohmlabError):
    """Collapse deferred: the particle sits in a sub-threshold gap."""


class NoCausticDetected(BohmlabError):
    """No interference fringes found within the simulated window."""


class UnknownScenario(BohmlabError):
    """Scenario name not present in the library."""


class ConfigError(BohmlabError):
    """Invalid run configuration; message names the offending key."""
