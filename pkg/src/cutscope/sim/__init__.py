from cutscope.sim.errors import SimulationError
from cutscope.sim.lorenz import gen_lorenz96, lorenz96_derivative, lorenz96_rk4_step
from cutscope.sim.missing import apply_missing
from cutscope.sim.var import gen_var, sample_var_coefficients, simulate_var, stabilize_coefficients

__all__ = [
    "SimulationError",
    "apply_missing",
    "gen_lorenz96",
    "gen_var",
    "lorenz96_derivative",
    "lorenz96_rk4_step",
    "sample_var_coefficients",
    "simulate_var",
    "stabilize_coefficients",
]
