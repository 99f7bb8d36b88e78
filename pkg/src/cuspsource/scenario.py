"""Experiment description: detectors, source, parameter domain and baseline profiles.

A :class:`Scenario` is plain data. Checking it against conditions C1-C5 is the
job of :func:`cuspsource.geometry.validate_scenario`; construction only rejects
values that cannot be represented at all (wrong kinds, non-finite numbers).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from .errors import InvalidParameterError

SCHEMA_VERSION = 1


class PlanarPoint(NamedTuple):
    x: float
    y: float

    @classmethod
    def parse(cls, value) -> "PlanarPoint":
        """Accept ``PlanarPoint``, a 2-sequence, a mapping with x/y, or ``"x,y"``."""
        if isinstance(value, PlanarPoint):
            return value
        if isinstance(value, str):
            parts = value.split(",")
            if len(parts) != 2:
                raise InvalidParameterError(f"expected 'x,y', got {value!r}")
            value = parts
        if isinstance(value, dict):
            value = (value["x"], value["y"])
        x, y = (float(v) for v in value)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise InvalidParameterError(f"non-finite point ({x}, {y})")
        return cls(x, y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y}


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned rectangle ``(x_min, x_max) x (y_min, y_max)``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.x_max, self.y_min, self.y_max):
            if not math.isfinite(v):
                raise InvalidParameterError("rectangle bounds must be finite")

    @property
    def is_proper(self) -> bool:
        return self.x_min < self.x_max and self.y_min < self.y_max

    @property
    def center(self) -> PlanarPoint:
        return PlanarPoint(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def diameter(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
                [self.x_min, self.y_max],
            ]
        )

    def contains(self, p, closed: bool = False) -> bool:
        x, y = p
        if closed:
            return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max
        return self.x_min < x < self.x_max and self.y_min < y < self.y_max

    def clamp(self, p) -> PlanarPoint:
        x, y = p
        return PlanarPoint(
            min(max(x, self.x_min), self.x_max), min(max(y, self.y_min), self.y_max)
        )

    def intersect(self, other: "Rectangle") -> "Rectangle":
        return Rectangle(
            max(self.x_min, other.x_min),
            min(self.x_max, other.x_max),
            max(self.y_min, other.y_min),
            min(self.y_max, other.y_max),
        )

    def translated(self, dx: float, dy: float) -> "Rectangle":
        return Rectangle(self.x_min + dx, self.x_max + dx, self.y_min + dy, self.y_max + dy)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, d: dict) -> "Rectangle":
        return cls(float(d["x_min"]), float(d["x_max"]), float(d["y_min"]), float(d["y_max"]))


@dataclass(frozen=True)
class BaselineProfile:
    """Signal level ``lambda_j(s)`` after arrival: constant or linear in ``s``."""

    kind: str = "constant"
    value_at_0: float = 1.0
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise InvalidParameterError(f"unknown baseline kind {self.kind!r}")
        if not (math.isfinite(self.value_at_0) and math.isfinite(self.slope)):
            raise InvalidParameterError("baseline parameters must be finite")
        if self.kind == "constant" and self.slope != 0.0:
            raise InvalidParameterError("constant baseline must have slope 0")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, s):
        return self.value_at_0 + self.slope * np.asarray(s, dtype=float)

    def min_on(self, horizon: float) -> float:
        return min(self.value_at_0, self.value_at_0 + self.slope * horizon)

    def max_on(self, horizon: float) -> float:
        return max(self.value_at_0, self.value_at_0 + self.slope * horizon)

    def scaled(self, factor: float) -> "BaselineProfile":
        return replace(self, value_at_0=self.value_at_0 * factor, slope=self.slope * factor)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value_at_0": self.value_at_0, "slope": self.slope}

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineProfile":
        return cls(str(d.get("kind", "constant")), float(d["value_at_0"]), float(d.get("slope", 0.0)))


@dataclass(frozen=True)
class Prior:
    """Prior density on the domain, up to a normalising constant.

    ``uniform`` is flat; ``gaussian`` is an isotropic normal restricted to the
    domain (positive and continuous there, which is all the estimator needs).
    """

    kind: str = "uniform"
    mean: tuple[float, float] | None = None
    sd: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian"):
            raise InvalidParameterError(f"unknown prior kind {self.kind!r}")
        if self.kind == "gaussian" and (self.mean is None or self.sd is None or self.sd <= 0):
            raise InvalidParameterError("gaussian prior needs mean and positive sd")
        if not self.scale > 0:
            raise InvalidParameterError("prior scale must be positive")

    def log_shape(self, x, y) -> np.ndarray:
        """Log density without the constant ``scale`` factor."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "uniform":
            return np.zeros(np.broadcast(x, y).shape)
        mx, my = self.mean
        return -((x - mx) ** 2 + (y - my) ** 2) / (2.0 * self.sd**2)

    def log_density(self, x, y) -> np.ndarray:
        return self.log_shape(x, y) + math.log(self.scale)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "gaussian":
            d.update(mean=list(self.mean), sd=self.sd)
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "Prior":
        if not d:
            return cls()
        mean = d.get("mean")
        return cls(
            str(d.get("kind", "uniform")),
            tuple(float(v) for v in mean) if mean is not None else None,
            float(d["sd"]) if d.get("sd") is not None else None,
            float(d.get("scale", 1.0)),
        )


@dataclass(frozen=True)
class Detector:
    position: PlanarPoint
    profile: BaselineProfile = field(default_factory=BaselineProfile)

    def to_dict(self) -> dict:
        return {"x": self.position.x, "y": self.position.y, "profile": self.profile.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Detector":
        return cls(PlanarPoint.parse(d), BaselineProfile.from_dict(d["profile"]))


@dataclass(frozen=True)
class Scenario:
    detectors: tuple[Detector, ...]
    source: PlanarPoint
    domain: Rectangle
    kappa: float
    delta: float
    lambda0: float
    nu: float
    horizon: float
    n: float
    prior: Prior = field(default_factory=Prior)

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "source", PlanarPoint.parse(self.source))
        for name in ("kappa", "delta", "lambda0", "nu", "horizon", "n"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidParameterError(f"{name} must be a finite number, got {v!r}")

    @property
    def k(self) -> int:
        return len(self.detectors)

    def detector_positions(self) -> np.ndarray:
        return np.array([[d.position.x, d.position.y] for d in self.detectors], dtype=float)

    def profile(self, j: int) -> BaselineProfile:
        return self.detectors[j].profile

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def translated(self, dx: float, dy: float) -> "Scenario":
        dets = tuple(
            Detector(PlanarPoint(d.position.x + dx, d.position.y + dy), d.profile)
            for d in self.detectors
        )
        prior = self.prior
        if prior.kind == "gaussian":
            prior = replace(prior, mean=(prior.mean[0] + dx, prior.mean[1] + dy))
        return replace(
            self,
            detectors=dets,
            source=PlanarPoint(self.source.x + dx, self.source.y + dy),
            domain=self.domain.translated(dx, dy),
            prior=prior,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "detectors": [d.to_dict() for d in self.detectors],
            "source": self.source.to_dict(),
            "domain": self.domain.to_dict(),
            "kappa": self.kappa,
            "delta": self.delta,
            "lambda0": self.lambda0,
            "nu": self.nu,
            "horizon": self.horizon,
            "n": self.n,
            "prior": self.prior.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InvalidParameterError(f"unsupported scenario schema_version {version}")
        try:
            return cls(
                detectors=tuple(Detector.from_dict(x) for x in d["detectors"]),
                source=PlanarPoint.parse(d["source"]),
                domain=Rectangle.from_dict(d["domain"]),
                kappa=float(d["kappa"]),
                delta=float(d["delta"]),
                lambda0=float(d["lambda0"]),
                nu=float(d["nu"]),
                horizon=float(d["horizon"]),
                n=float(d["n"]),
                prior=Prior.from_dict(d.get("prior")),
            )
        except KeyError as exc:
            raise InvalidParameterError(f"scenario is missing field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        """Stable short hash of the canonical JSON form."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def canonical_scenario(n: float = 1000.0, kappa: float = 0.25, signal: float = 2.0) -> Scenario:
    """Three detectors around a source at the origin, ``Theta = (-1, 1)^2``.

    The detector directions seen from the source are (0, 1), (1, 0) and
    (-1, -1)/sqrt(2); projections of a square lattice onto them take few
    distinct values, which keeps limit-field covariance matrices small.
    """
    profile = BaselineProfile("constant", signal, 0.0)
    return Scenario(
        detectors=tuple(
            Detector(PlanarPoint(x, y), profile) for x, y in ((0.0, 10.0), (10.0, 0.0), (-7.0, -7.0))
        ),
        source=PlanarPoint(0.0, 0.0),
        domain=Rectangle(-1.0, 1.0, -1.0, 1.0),
        kappa=kappa,
        delta=1.0,
        lambda0=1.0,
        nu=1.0,
        horizon=20.0,
        n=n,
    )
