"""Bezier trajectory planning for STL specifications by mixed-integer programming."""
from .bezier import BezierError, BezierSegment, Trajectory, bezier_derivative, bezier_eval, compose_trajectory
from .bnb import BnbResult, branch_and_bound
from .encode import MilpModel, PlanError, PlanScenario, encode_milp, milp_census
from .lp import LpError, LpResult, lp_solve
from .plan import PlanInfeasible, PlanResult, knot_separation, plan, plan_multi

__all__ = [
    "BezierError", "BezierSegment", "Trajectory", "bezier_derivative", "bezier_eval", "compose_trajectory",
    "BnbResult", "branch_and_bound", "MilpModel", "PlanError", "PlanScenario", "encode_milp", "milp_census",
    "LpError", "LpResult", "lp_solve", "PlanInfeasible", "PlanResult", "knot_separation", "plan", "plan_multi",
]
