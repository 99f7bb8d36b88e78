"""Simulation of detector event streams by thinning."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidParameterError, ScenarioValidationError
from .geometry import arrival_times, arrival_window, validate_scenario
from .rng import substream
from .scenario import Scenario
from .signal import intensity_at, max_signal

OBS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EventRecord:
    """Event times of one detector, observed on ``[start, end]``."""

    detector_index: int
    times: np.ndarray
    start: float
    end: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < self.start or t[-1] > self.end):
            raise InvalidParameterError(
                f"record {self.detector_index}: times must be strictly increasing within [{self.start}, {self.end}]"
            )
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class ObservationSet:
    records: tuple[EventRecord, ...]
    scenario: Scenario
    seed: int | None = None
    acceptance: tuple[float, ...] = field(default=())

    @property
    def counts(self) -> list[int]:
        return [len(r) for r in self.records]

    def sidecar(self) -> dict:
        return {
            "schema_version": OBS_SCHEMA_VERSION,
            "seed": self.seed,
            "windows": [[r.start, r.end] for r in self.records],
            "counts": self.counts,
            "acceptance": list(self.acceptance),
            "scenario": self.scenario.to_dict(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector_index", "time"])
        for r in self.records:
            for t in r.times:
                w.writerow([r.detector_index, repr(float(t))])
        return buf.getvalue()

    def save(self, csv_path) -> Path:
        """Write the CSV and a JSON sidecar next to it; returns the sidecar path."""
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv())
        side = sidecar_path(csv_path)
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return side

    @classmethod
    def load(cls, csv_path, scenario: Scenario | None = None) -> "ObservationSet":
        csv_path = Path(csv_path)
        side = sidecar_path(csv_path)
        meta = json.loads(side.read_text()) if side.exists() else {}
        if scenario is None:
            if "scenario" not in meta:
                raise InvalidParameterError(f"no scenario given and no sidecar at {side}")
            scenario = Scenario.from_dict(meta["scenario"])
        k = scenario.k
        windows = meta.get("windows") or [[0.0, scenario.horizon]] * k
        buckets: list[list[float]] = [[] for _ in range(k)]
        with csv_path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                j = int(row["detector_index"])
                if not 0 <= j < k:
                    raise InvalidParameterError(f"detector_index {j} out of range for {k} detectors")
                buckets[j].append(float(row["time"]))
        records = tuple(
            EventRecord(j, np.sort(np.array(b)), float(windows[j][0]), float(windows[j][1]))
            for j, b in enumerate(buckets)
        )
        return cls(records, scenario, meta.get("seed"), tuple(meta.get("acceptance", ())))


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json") if p.suffix != ".json" else p.with_suffix(".meta.json")


def informative_windows(scenario: Scenario, points=None) -> list[tuple[float, float]]:
    """Per-detector time windows holding all location information.

    With a constant baseline the intensity at detector j differs between two
    candidate sources only on ``[min tau_j, max tau_j + delta]``; outside it the
    log-likelihood gains the same amount for every candidate. ``points`` extends
    the candidate set beyond the domain (for local-field excursions). Detectors
    with a linear baseline keep the full horizon.
    """
    sc = scenario
    out = []
    extra = None
    if points is not None:
        extra = arrival_times(sc.detector_positions(), np.atleast_2d(points), sc.nu)
    for j in range(sc.k):
        if not sc.profile(j).is_constant:
            out.append((0.0, sc.horizon))
            continue
        lo, hi = arrival_window(sc, j)
        if extra is not None:
            lo = min(lo, float(extra[:, j].min()))
            hi = max(hi, float(extra[:, j].max()))
        out.append((max(0.0, lo), min(sc.horizon, hi + sc.delta)))
    return out


def local_windows(scenario: Scenario, points) -> list[tuple[float, float]]:
    """Smallest windows on which the intensities at the source and at ``points`` differ.

    Enough for likelihood ratios between those points when baselines are
    constant; linear-baseline detectors keep the full horizon.
    """
    sc = scenario
    pts = np.vstack([sc.source.as_array()[None, :], np.atleast_2d(np.asarray(points, dtype=float))])
    taus = arrival_times(sc.detector_positions(), pts, sc.nu)
    out = []
    for j in range(sc.k):
        if not sc.profile(j).is_constant:
            out.append((0.0, sc.horizon))
            continue
        out.append((max(0.0, float(taus[:, j].min())), min(sc.horizon, float(taus[:, j].max()) + sc.delta)))
    return out


def _thin(scenario: Scenario, j: int, tau: float, lo: float, hi: float, rng: np.random.Generator):
    sc = scenario
    lam_max = sc.n * (sc.lambda0 + max_signal(sc.profile(j), sc.horizon))
    n_cand = rng.poisson(lam_max * (hi - lo))
    cand = np.sort(rng.uniform(lo, hi, size=n_cand))
    keep = rng.uniform(0.0, lam_max, size=n_cand) < intensity_at(sc, j, tau, cand)
    times = cand[keep]
    # strictly increasing: drop exact float duplicates (probability zero in exact arithmetic)
    if times.size > 1:
        times = times[np.concatenate(([True], np.diff(times) > 0))]
    rate = float(keep.mean()) if n_cand else 1.0
    return times, rate


def simulate(scenario: Scenario, seed: int, windows=None, validate: bool = True) -> ObservationSet:
    """Simulate all detectors at the true source.

    ``windows`` restricts observation per detector (``"informative"`` uses
    :func:`informative_windows`); ``None`` observes the full horizon.
    """
    sc = scenario
    if validate:
        report = validate_scenario(sc)
        if not report.ok:
            raise ScenarioValidationError(report)
    if windows is None:
        windows = [(0.0, sc.horizon)] * sc.k
    elif isinstance(windows, str):
        if windows != "informative":
            raise InvalidParameterError(f"unknown window mode {windows!r}")
        windows = informative_windows(sc)
    if len(windows) != sc.k:
        raise InvalidParameterError("one window per detector required")
    taus = arrival_times(sc.detector_positions(), sc.source.as_array(), sc.nu)[0]
    records, rates = [], []
    for j, (lo, hi) in enumerate(windows):
        if not 0.0 <= lo <= hi <= sc.horizon:
            raise DomainError(f"window {lo, hi} for detector {j} not inside [0, T]")
        times, rate = _thin(sc, j, float(taus[j]), float(lo), float(hi), substream(seed, j))
        records.append(EventRecord(j, times, float(lo), float(hi)))
        rates.append(rate)
    return ObservationSet(tuple(records), sc, int(seed), tuple(rates))


def counting_path(record: EventRecord, t) -> int | np.ndarray:
    """Number of events at or before ``t`` (right-continuous step path)."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt < record.start) or np.any(tt > record.end):
        raise DomainError(f"t outside observation window [{record.start}, {record.end}]")
    out = np.searchsorted(record.times, tt, side="right")
    return int(out) if out.ndim == 0 else out
