"""End-to-end reconstruction: detect -> fuse -> arrange -> energy -> extract."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .arrangement import CellComplex, build_complex
from .energy import (EnergyParams, EnergyModel, LPSolution, assemble, evaluate, nonmanifold_edges,
                     polish, repair_nonmanifold, round_labeling, solve_lp, to_lp)
from .lineio import LineCloud
from .ransac import DetectParams, SupportState, detect_planes, fuse_planes
from .surface import PolygonMesh, extract_surface, validate


@dataclass
class PipelineConfig:
    # detection
    epsilon: float = 0.02
    epsilon_fus: float | None = None
    theta_min: float = 5.0
    theta_fus: float = 10.0
    p_fus: float = 0.2
    n_iter: int = 50_000
    n_max: int = 160
    min_support: int = 4
    distance: str = "max"
    patience: int = 10
    exhaustive: bool = False
    fuse: bool = True
    # energy
    sigma: float = 1.0
    lambda_vis: float = 0.1
    lambda_edge: float = 0.01
    lambda_corner: float = 0.01
    viewpoint_constraint: bool = True
    polish: bool = True
    manifold_repair: bool = True
    solver_tol: float = 1e-7
    # scene
    bbox_inflate: float = 0.05
    suppress_box_faces: bool = False
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.epsilon_fus is None:
            self.epsilon_fus = 3.0 * self.epsilon
        self.detect_params()  # validates

    def detect_params(self) -> DetectParams:
        return DetectParams(epsilon=self.epsilon, theta_min=self.theta_min, n_iter=self.n_iter,
                            n_max=self.n_max, min_support=self.min_support,
                            epsilon_fus=self.epsilon_fus, theta_fus=self.theta_fus,
                            p_fus=self.p_fus, distance=self.distance, patience=self.patience,
                            mode="exhaustive" if self.exhaustive else "sampled")

    def energy_params(self) -> EnergyParams:
        return EnergyParams(sigma=self.sigma, lambda_vis=self.lambda_vis,
                            lambda_edge=self.lambda_edge, lambda_corner=self.lambda_corner,
                            viewpoint_constraint=self.viewpoint_constraint)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string or typed values; unknown keys raise KeyError."""
        types = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in types:
                raise KeyError(f"unknown config key {key!r}")
            kw[name] = _coerce(raw, cls.__dataclass_fields__[name].default)
        return cls(**kw)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float) or default is None:
        return float(raw)
    return raw.strip()


@dataclass
class Reconstruction:
    support_detected: SupportState
    support: SupportState
    complex: CellComplex
    model: EnergyModel
    lp: LPSolution
    labels: np.ndarray
    mesh: PolygonMesh
    report: dict
    timings: dict = field(default_factory=dict)

    def report_json(self) -> str:
        return dumps_report(self.report)


def _r(x: float) -> float:
    return float(f"{x:.12g}")


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=1, sort_keys=True) + "\n"


def reconstruct(cloud: LineCloud, config: PipelineConfig | None = None,
                planes: SupportState | None = None) -> Reconstruction:
    """Run the whole pipeline. ``planes`` skips detection and fusion."""
    cfg = config or PipelineConfig()
    timings = {}
    t = time.perf_counter()
    if planes is None:
        detected = detect_planes(cloud, cfg.detect_params(), cfg.seed)
        timings["detect"] = time.perf_counter() - t
        t = time.perf_counter()
        support = fuse_planes(detected, cfg.detect_params()) if cfg.fuse else detected
        timings["fuse"] = time.perf_counter() - t
    else:
        detected = support = planes
    t = time.perf_counter()
    cx = build_complex(support.planes, cloud.bounding_box(cfg.bbox_inflate), max_planes=cfg.n_max)
    timings["arrange"] = time.perf_counter() - t
    t = time.perf_counter()
    model = assemble(cx, cloud, support, cfg.energy_params())
    timings["assemble"] = time.perf_counter() - t
    t = time.perf_counter()
    sol = solve_lp(to_lp(model), tol=cfg.solver_tol)
    rounded = round_labeling(sol.cells, model.hard_empty)
    labels, n_polish = polish(model, rounded) if cfg.polish else (rounded, 0)
    labels, n_repair = repair_nonmanifold(model, labels) if cfg.manifold_repair else (labels, 0)
    energy = evaluate(model, labels)
    timings["solve"] = time.perf_counter() - t
    t = time.perf_counter()
    mesh = extract_surface(cx, labels, include_box_faces=not cfg.suppress_box_faces)
    val = validate(mesh)
    timings["extract"] = time.perf_counter() - t
    counts = support.counts()
    frac = sol.cells
    report = {
        "format": "report/1",
        "seed": cfg.seed,
        "config": {k: v for k, v in cfg.to_dict().items() if k != "threads"},
        "segments": len(cloud.segments),
        "viewpoints": len(cloud.viewpoints),
        "planes_detected": detected.n_detected,
        "planes_fused": len(support.planes),
        "L0": counts["L0"], "L1": counts["L1"], "L2": counts["L2"],
        "subsegments": model.diagnostics["subsegments"],
        "complex": cx.summary(),
        "terms": {"groups": len(model.group_cells), "pairs": len(model.pair_w),
                  "edges": len(model.edge_rings), "corners": len(model.corner_pairs),
                  "hard_empty": len(model.hard_empty)},
        "diagnostics": dict(model.diagnostics),
        "lp_objective": _r(sol.objective),
        "lp_fractional_cells": int(np.sum((frac > 1e-6) & (frac < 1 - 1e-6))),
        "rounded_energy": _r(evaluate(model, rounded).total),
        "polish_flips": n_polish,
        "repair_flips": n_repair,
        "unresolved_nonmanifold": len(nonmanifold_edges(model, labels)),
        "energy": {"prim": _r(energy.prim), "vis": _r(energy.vis), "reg": _r(energy.reg),
                   "total": _r(energy.total)},
        "full_cells": int(labels.sum()),
        "validation": {k: (_r(v) if isinstance(v, float) else v) for k, v in val.items()},
    }
    return Reconstruction(detected, support, cx, model, sol, labels, mesh, report,
                          {k: round(v, 4) for k, v in timings.items()})
