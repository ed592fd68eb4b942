"""Fatal simulation diagnostics (modeled program errors, deadlocks)."""


class SimulationFault(Exception):
    """The simulated software did something fatal: unmapped page, permission
    violation, malformed program, or a deadlock the guard detected."""
