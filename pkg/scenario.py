"""
HeatFlow Lab - Scenarios
========================
Scenario files are JSON with a strict schema. Every block is optional except
the geometry and bundle keys marked required below; anything missing falls
back to the DEFAULTS table. Named presets live in data/presets.json.

Defaults table:
    geometry.n                 required   complex dimension (1 or 2)
    geometry.grid              required   points per real axis
    geometry.periods           []         side lengths; empty means s = 1
    bundle.block_ranks         required   rank of each block
    bundle.degrees             required   flux integer of each block
    bundle.rank                null       optional consistency check
    bundle.a_preset            direct_sum direct_sum | extension | random_smooth
    bundle.seed                0
    bundle.amplitude           1.0
    bundle.conformal           true       Tr iF̂_0 made constant
    flow.dt0                   null       0.2·dx²·s when null
    flow.t_max                 20.0
    flow.eps                   1e-6
    flow.blowup                1e6
    flow.stride                50
    flow.normalize_det         true
    analysis.sigma_schedule    null       2^0 … 2^-20 when null
    analysis.tau               1e-6
    analysis.delta_mem         1e-4
    analysis.delta_conv        1e-3
    analysis.tol_slope         1e-3
    analysis.eps_loc           0.5
    frobenius.problem          null       path of a problem file
    frobenius.family           null       built-in family name
    frobenius.degree           8
    frobenius.mode             exact      exact | float
    output.dir                 null       HEATFLOW_OUT_DIR/<name> when null
"""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import settings
from bundle_fields import A_PRESETS, BundleSpec, build_bundle
from donaldson_flow import FlowControls
from errors import ScenarioError
from frobenius_series import FAMILIES
from torus_geometry import TorusGeometry

logger = logging.getLogger('Scenario')

REQUIRED = object()

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "geometry": {"n": REQUIRED, "grid": REQUIRED, "periods": []},
    "bundle": {"block_ranks": REQUIRED, "degrees": REQUIRED, "rank": None,
               "a_preset": "direct_sum", "seed": 0, "amplitude": 1.0, "conformal": True},
    "flow": {"dt0": None, "t_max": 20.0, "eps": 1e-6, "blowup": 1e6, "stride": 50,
             "normalize_det": True},
    "analysis": {"sigma_schedule": None, "tau": 1e-6, "delta_mem": 1e-4, "delta_conv": 1e-3,
                 "tol_slope": 1e-3, "eps_loc": 0.5},
    "frobenius": {"problem": None, "family": None, "degree": 8, "mode": "exact"},
    "output": {"dir": None},
}

POSITIVE = {"flow.t_max", "flow.eps", "flow.blowup", "flow.stride", "analysis.tau",
            "analysis.delta_mem", "analysis.delta_conv", "analysis.tol_slope", "analysis.eps_loc",
            "frobenius.degree"}


@dataclass
class Scenario:
    name: str
    data: Dict[str, Dict[str, Any]]

    def __getitem__(self, dotted: str) -> Any:
        block, key = dotted.split(".")
        return self.data[block][key]

    @property
    def hash(self) -> str:
        return scenario_hash(self)

    def geometry(self) -> TorusGeometry:
        g = self.data["geometry"]
        return TorusGeometry(n=g["n"], grid=g["grid"], periods=tuple(g["periods"]))

    def bundle(self, seed: Optional[int] = None) -> BundleSpec:
        b = self.data["bundle"]
        return build_bundle(self.geometry(), b["block_ranks"], b["degrees"], b["a_preset"],
                            seed=b["seed"] if seed is None else seed,
                            amplitude=b["amplitude"], conformal=b["conformal"])

    def flow_controls(self) -> FlowControls:
        f = self.data["flow"]
        return FlowControls(dt0=f["dt0"], t_max=f["t_max"], eps=f["eps"], blowup=f["blowup"],
                            stride=int(f["stride"]), normalize_det=f["normalize_det"])

    def output_dir(self, override: Optional[str] = None) -> Path:
        if override:
            return Path(override)
        if self.data["output"]["dir"]:
            return Path(self.data["output"]["dir"])
        return settings.out_dir() / self.name

    def to_dict(self) -> Dict:
        return {"name": self.name, **copy.deepcopy(self.data)}


# ============================================================================
# PARSING
# ============================================================================

def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_types(data: Dict[str, Dict[str, Any]]) -> None:
    g, b = data["geometry"], data["bundle"]
    if g["n"] not in (1, 2):
        raise ScenarioError("geometry.n", f"must be 1 or 2, got {g['n']!r}")
    if not isinstance(g["grid"], int) or isinstance(g["grid"], bool):
        raise ScenarioError("geometry.grid", f"must be an integer, got {g['grid']!r}")
    if not isinstance(g["periods"], list) or not all(_is_number(p) and p > 0 for p in g["periods"]):
        raise ScenarioError("geometry.periods", "must be a list of positive numbers")
    for key in ("block_ranks", "degrees"):
        value = b[key]
        if not isinstance(value, list) or not value or not all(isinstance(v, int) for v in value):
            raise ScenarioError(f"bundle.{key}", "must be a nonempty list of integers")
    if len(b["block_ranks"]) != len(b["degrees"]):
        raise ScenarioError("bundle.degrees", "needs one degree per block")
    if b["rank"] is not None and b["rank"] != sum(b["block_ranks"]):
        raise ScenarioError("bundle.rank", f"{b['rank']} does not match block ranks {b['block_ranks']}")
    if b["a_preset"] not in A_PRESETS:
        raise ScenarioError("bundle.a_preset", f"unknown preset {b['a_preset']!r}; choose from {A_PRESETS}")
    if data["frobenius"]["mode"] not in ("exact", "float"):
        raise ScenarioError("frobenius.mode", "must be 'exact' or 'float'")
    family = data["frobenius"]["family"]
    if family is not None and family not in FAMILIES:
        raise ScenarioError("frobenius.family", f"unknown family {family!r}; choose from {FAMILIES}")
    schedule = data["analysis"]["sigma_schedule"]
    if schedule is not None and (not isinstance(schedule, list) or len(schedule) < 2
                                 or not all(_is_number(s) and 0 < s <= 1 for s in schedule)):
        raise ScenarioError("analysis.sigma_schedule", "must list two or more values in (0, 1]")
    for dotted in POSITIVE:
        block, key = dotted.split(".")
        value = data[block][key]
        if not _is_number(value) or value <= 0:
            raise ScenarioError(dotted, f"must be a positive number, got {value!r}")
    dt0 = data["flow"]["dt0"]
    if dt0 is not None and (not _is_number(dt0) or dt0 <= 0):
        raise ScenarioError("flow.dt0", f"must be positive or null, got {dt0!r}")


def parse_scenario(raw: Dict, name: str = "scenario") -> Scenario:
    """Merge a raw scenario dict over DEFAULTS, rejecting unknown or missing keys."""
    if not isinstance(raw, dict):
        raise ScenarioError("<root>", "scenario must be a JSON object")
    name = raw.get("name", name)
    data: Dict[str, Dict[str, Any]] = {}
    for block in raw:
        if block != "name" and block not in DEFAULTS:
            raise ScenarioError(block, "unknown block")
    for block, defaults in DEFAULTS.items():
        given = raw.get(block, {})
        if not isinstance(given, dict):
            raise ScenarioError(block, "must be an object")
        for key in given:
            if key not in defaults:
                raise ScenarioError(f"{block}.{key}", "unknown key")
        merged = {}
        for key, default in defaults.items():
            if key in given:
                merged[key] = given[key]
            elif default is REQUIRED:
                raise ScenarioError(f"{block}.{key}", "missing required key")
            else:
                merged[key] = copy.deepcopy(default)
        data[block] = merged
    _check_types(data)
    return Scenario(name=name, data=data)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioError("<file>", f"{path} not found") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(f"<line {e.lineno}>", e.msg) from None
    return parse_scenario(raw, name=path.stem)


def preset_names() -> list:
    return sorted(_load_presets())


def _load_presets() -> Dict[str, Dict]:
    path = settings.data_dir() / "presets.json"
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ScenarioError("<preset>", f"preset table {path} not found") from None


def load_preset(name: str) -> Scenario:
    presets = _load_presets()
    if name not in presets:
        raise ScenarioError("<preset>", f"unknown preset {name!r}; available: {sorted(presets)}")
    return parse_scenario(presets[name], name=name)


def scenario_hash(scenario: Scenario) -> str:
    """sha256 of the canonical JSON of the fully-defaulted scenario."""
    canonical = json.dumps(scenario.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
