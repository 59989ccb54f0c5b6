"""
HeatFlow Lab - Frobenius Worker
===============================
Worker: reads a series problem file (or a built-in family), builds the
holomorphic frame and writes the solution with its residual certificates.
"""

import logging
from pathlib import Path
from typing import Dict, Optional

from errors import ScenarioError
from fieldio import read_json, write_json
from frobenius_series import solve_problem

logger = logging.getLogger('FrobeniusWorker')


class FrobeniusWorker:
    """
    Frobenius Worker: the series solver.

    Problem files look like
        {"family": "exp_scalar", "degree": 8, "mode": "exact"}
    or
        {"f": <series JSON>, "A": [<series JSON>, ...], "degree": 8, "mode": "float"}
    """

    @staticmethod
    def load_problem(path) -> Dict:
        path = Path(path)
        if not path.exists():
            raise ScenarioError("frobenius.problem", f"{path} not found")
        return read_json(path)

    @staticmethod
    def solve(problem: Dict, exact: Optional[bool] = None) -> Dict:
        solution = solve_problem(problem, exact)
        logger.info("frobenius solve (%s, degree %d): residuals %s",
                    solution["mode"], solution["degree"], solution["residuals"])
        return solution

    @staticmethod
    def write(solution: Dict, out_dir, scenario_hash: str = "") -> Path:
        path = Path(out_dir) / "frobenius_solution.json"
        write_json(path, {**solution, "scenario_hash": scenario_hash})
        return path
