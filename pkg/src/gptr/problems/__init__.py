from .analytic import analytic_suite, get_analytic, quadratic, rosenbrock, sine_wave
from .base import EvaluationError, ProblemSpec
from .reactor import ReactorParams, ArcInput, reactor_problem, scenario_schedule

__all__ = [
    "ProblemSpec",
    "EvaluationError",
    "analytic_suite",
    "get_analytic",
    "quadratic",
    "rosenbrock",
    "sine_wave",
    "ReactorParams",
    "ArcInput",
    "reactor_problem",
    "scenario_schedule",
]
