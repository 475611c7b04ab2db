from __future__ import annotations

from cutscope.ports import NumericalFailure


class SimulationError(NumericalFailure):
    pass
