"""Spatial scene: RSUs and OBUs on an l x w rectangle drawn from homogeneous
Poisson point processes, plus the dwell-time context of a vehicle."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import as_generator


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class SceneConfig:
    length_m: float = 2000.0
    width_m: float = 2000.0
    rsu_density: float = 2.5e-5
    obu_density: float = 1e-4
    network_radius_m: float = 1000.0
    speed_min: float = 5.0
    speed_max: float = 30.0

    def __post_init__(self):
        for name in ("length_m", "width_m", "rsu_density", "obu_density",
                     "network_radius_m", "speed_min", "speed_max"):
            _check_finite(name, getattr(self, name))
        if self.length_m <= 0 or self.width_m <= 0:
            raise ValueError("rectangle sides must be positive")
        if self.network_radius_m <= 0:
            raise ValueError("network_radius_m must be positive")
        if self.rsu_density < 0 or self.obu_density < 0:
            raise ValueError("densities must be non-negative")
        if not 0 < self.speed_min <= self.speed_max:
            raise ValueError("need 0 < speed_min <= speed_max")

    @property
    def area(self) -> float:
        return self.length_m * self.width_m

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.length_m / 2, self.width_m / 2)


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    speed: float
    heading: float


@dataclass(frozen=True)
class SpatialScene:
    config: SceneConfig
    rsu_positions: np.ndarray  # (n_rsu, 2)
    obu_positions: np.ndarray  # (n_obu, 2)
    obu_speeds: np.ndarray
    obu_headings: np.ndarray

    @property
    def n_rsu(self) -> int:
        return len(self.rsu_positions)

    @property
    def n_obu(self) -> int:
        return len(self.obu_positions)

    def vehicle(self, i: int) -> VehicleState:
        x, y = self.obu_positions[i]
        return VehicleState(float(x), float(y), float(self.obu_speeds[i]), float(self.obu_headings[i]))

    def closest_rsu(self, i: int) -> int:
        if self.n_rsu == 0:
            raise LookupError("scene has no RSUs")
        d2 = ((self.rsu_positions - self.obu_positions[i]) ** 2).sum(axis=1)
        return int(np.argmin(d2))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_type", "x", "y", "speed", "heading"])
            for x, y in self.rsu_positions:
                w.writerow(["rsu", repr(float(x)), repr(float(y)), "", ""])
            for (x, y), v, h in zip(self.obu_positions, self.obu_speeds, self.obu_headings):
                w.writerow(["obu", repr(float(x)), repr(float(y)), repr(float(v)), repr(float(h))])


def _uniform_points(rng: np.random.Generator, count: int, cfg: SceneConfig) -> np.ndarray:
    pts = rng.random((count, 2))
    pts[:, 0] *= cfg.length_m
    pts[:, 1] *= cfg.width_m
    return pts


def sample_scene(cfg: SceneConfig, rng_seed: int | np.random.Generator) -> SpatialScene:
    """Draw one realisation of both point processes.

    Counts are Poisson with mean density * area; positions are i.i.d.
    uniform on the rectangle, speeds uniform on [speed_min, speed_max] and
    headings uniform on [0, 2*pi).
    """
    rng = as_generator(rng_seed)
    n_rsu = int(rng.poisson(cfg.rsu_density * cfg.area))
    n_obu = int(rng.poisson(cfg.obu_density * cfg.area))
    rsu = _uniform_points(rng, n_rsu, cfg)
    obu = _uniform_points(rng, n_obu, cfg)
    speeds = rng.uniform(cfg.speed_min, cfg.speed_max, n_obu)
    headings = rng.uniform(0.0, 2 * math.pi, n_obu)
    return SpatialScene(cfg, rsu, obu, speeds, headings)


def dwell_time(network_radius_m: float, speed: float) -> float:
    """Seconds a vehicle stays inside a network of the given radius: r / v."""
    _check_finite("network_radius_m", network_radius_m)
    _check_finite("speed", speed)
    if network_radius_m <= 0:
        raise ValueError("network radius must be positive")
    if speed <= 0:
        raise ValueError("speed must be positive (zero speed means unbounded dwell)")
    return network_radius_m / speed
