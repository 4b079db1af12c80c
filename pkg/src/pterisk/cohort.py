"""Clinical data model, repeated-measure aggregation and cohort inclusion rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence


class TriState(str, enum.Enum):
    PRESENT = "present"
    ABSENT = "absent"
    INDETERMINATE = "indeterminate"
    NOT_REPORTED = "not_reported"

    @classmethod
    def parse(cls, raw) -> "TriState":
        """Map loosely formatted table cells onto a TriState.

        Empty cells and the ``NOT_REPORTED`` token both become ``not_reported``.
        """
        if raw is None:
            return cls.NOT_REPORTED
        if isinstance(raw, TriState):
            return raw
        if isinstance(raw, bool):
            return cls.PRESENT if raw else cls.ABSENT
        text = str(raw).strip().lower()
        if text in ("", "not_reported", "nan", "na"):
            return cls.NOT_REPORTED
        if text in ("present", "yes", "true", "1", "y"):
            return cls.PRESENT
        if text in ("absent", "no", "false", "0", "n"):
            return cls.ABSENT
        if text in ("indeterminate", "unknown", "equivocal"):
            return cls.INDETERMINATE
        raise ValueError(f"unrecognised tri-state value {raw!r}")


class CohortError(ValueError):
    """Invalid cohort content (bad rows, duplicate ids, broken invariants)."""


@dataclass(frozen=True)
class SeriesSummary:
    first: float
    last: float
    min: float
    max: float
    mean: float
    std: float
    time_of_max: float

    def __post_init__(self):
        if self.std < 0:
            raise CohortError("series std must be non-negative")
        # mean can drift past min/max by rounding when all values are equal
        tol = 1e-9 * max(1.0, abs(self.max), abs(self.min))
        if not (self.min - tol <= self.mean <= self.max + tol):
            raise CohortError("series mean outside [min, max]")
        for name in ("first", "last"):
            v = getattr(self, name)
            if not (self.min <= v <= self.max):
                raise CohortError(f"series {name} outside [min, max]")
        if self.time_of_max < 0:
            raise CohortError("time_of_max must be >= 0")


def aggregate_series(measurements: Sequence[tuple[float, float]]) -> SeriesSummary:
    """Summarise a repeated measurement as first/last/min/max/mean/std.

    Measurements are ordered by time with a stable sort, so equal timestamps
    keep their input order. ``std`` is the population standard deviation and
    ``time_of_max`` is the time of the first occurrence of the maximum.
    """
    if len(measurements) == 0:
        raise CohortError("empty series")
    pairs = []
    for t, v in measurements:
        t, v = float(t), float(v)
        if not (math.isfinite(t) and math.isfinite(v)):
            raise CohortError("invalid measurement")
        pairs.append((t, v))
    pairs.sort(key=lambda p: p[0])
    values = [v for _, v in pairs]
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    vmax = max(values)
    t_max = next(t for t, v in pairs if v == vmax)
    lo = min(values)
    return SeriesSummary(
        first=values[0],
        last=values[-1],
        min=lo,
        max=vmax,
        mean=min(max(mean, lo), vmax),
        std=math.sqrt(var),
        time_of_max=t_max,
    )


def _check_range(name, value, lo, hi):
    if value is not None and not (lo <= value <= hi):
        raise CohortError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class GcsRecord:
    total_worst: Optional[int] = None
    total_best: Optional[int] = None
    eye_worst: Optional[int] = None
    eye_best: Optional[int] = None
    verbal_worst: Optional[int] = None
    verbal_best: Optional[int] = None
    motor_worst: Optional[int] = None
    motor_best: Optional[int] = None

    def __post_init__(self):
        for part, (lo, hi) in GCS_RANGES.items():
            worst = getattr(self, f"{part}_worst")
            best = getattr(self, f"{part}_best")
            _check_range(f"gcs.{part}_worst", worst, lo, hi)
            _check_range(f"gcs.{part}_best", best, lo, hi)
            if worst is not None and best is not None and worst > best:
                raise CohortError(f"gcs.{part}: worst {worst} > best {best}")


GCS_RANGES = {"total": (3, 15), "eye": (1, 4), "verbal": (1, 5), "motor": (1, 6)}


@dataclass(frozen=True)
class HospitalCourse:
    icu_admitted: bool = False
    icu_days: Optional[float] = None
    surgery_performed: bool = False
    surgery_type: Optional[str] = None
    hours_to_surgery: Optional[float] = None
    acute_seizure_7d: bool = False
    operative_note: Optional[str] = None

    def __post_init__(self):
        if self.icu_days is not None:
            if self.icu_days < 0:
                raise CohortError("icu_days must be >= 0")
            if not self.icu_admitted:
                raise CohortError("icu_days given without ICU admission")
        if self.hours_to_surgery is not None and self.hours_to_surgery < 0:
            raise CohortError("hours_to_surgery must be >= 0")
        if (self.hours_to_surgery is not None or self.surgery_type is not None) and not self.surgery_performed:
            raise CohortError("surgery details given without surgery_performed")


CT_FINDINGS = (
    "contusion",
    "epidural_hematoma",
    "intracerebral_hemorrhage",
    "skull_fracture",
    "subarachnoid_hemorrhage",
)


@dataclass(frozen=True)
class CtFindings:
    contusion: TriState = TriState.NOT_REPORTED
    epidural_hematoma: TriState = TriState.NOT_REPORTED
    intracerebral_hemorrhage: TriState = TriState.NOT_REPORTED
    skull_fracture: TriState = TriState.NOT_REPORTED
    subarachnoid_hemorrhage: TriState = TriState.NOT_REPORTED
    marshall_score: Optional[int] = None

    def __post_init__(self):
        for name in CT_FINDINGS:
            if not isinstance(getattr(self, name), TriState):
                raise CohortError(f"ct.{name} must be a TriState")
        _check_range("ct.marshall_score", self.marshall_score, 1, 6)


LAB_ANALYTES = ("creatinine", "lactate", "hemoglobin", "paco2")


@dataclass(frozen=True)
class LabPanel:
    creatinine: Optional[SeriesSummary] = None
    lactate: Optional[SeriesSummary] = None
    hemoglobin: Optional[SeriesSummary] = None
    paco2: Optional[SeriesSummary] = None


HISTORY_FLAGS = (
    "prior_epilepsy",
    "prior_seizures",
    "neurodegenerative",
    "prior_neuro_illness",
    "tia_stroke",
    "anticoagulant",
    "antiplatelet",
)


@dataclass(frozen=True)
class HistoryDemographics:
    age_years: int = 0
    sex: Optional[str] = None
    race: Optional[str] = None
    prior_epilepsy: Optional[bool] = False
    prior_seizures: Optional[bool] = None
    neurodegenerative: Optional[bool] = None
    prior_neuro_illness: Optional[bool] = None
    tia_stroke: Optional[bool] = None
    anticoagulant: Optional[bool] = None
    antiplatelet: Optional[bool] = None

    def __post_init__(self):
        if self.age_years < 0:
            raise CohortError("age_years must be >= 0")


@dataclass(frozen=True)
class ImagingNotes:
    ct_report: Optional[str] = None
    mri_report: Optional[str] = None

    @property
    def available(self) -> bool:
        return bool(self.ct_report) or bool(self.mri_report)


@dataclass(frozen=True)
class Subject:
    """One patient's acute record and PTE label.

    ``raw_outcome`` holds the unfiltered diagnosis field of an ingested record.
    It is ``None`` once :func:`apply_inclusion` has turned it into ``label``.
    """

    subject_id: str
    gcs: GcsRecord = field(default_factory=GcsRecord)
    course: HospitalCourse = field(default_factory=HospitalCourse)
    ct: CtFindings = field(default_factory=CtFindings)
    labs: LabPanel = field(default_factory=LabPanel)
    history: HistoryDemographics = field(default_factory=HistoryDemographics)
    imaging: ImagingNotes = field(default_factory=ImagingNotes)
    label: bool = False
    raw_outcome: Optional[TriState] = None


@dataclass(frozen=True)
class Cohort:
    subjects: tuple
    provenance: str = "synthetic"
    generator_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if self.provenance not in ("ingested", "synthetic"):
            raise CohortError(f"unknown provenance {self.provenance!r}")
        seen = set()
        for s in self.subjects:
            if s.subject_id in seen:
                raise CohortError(f"duplicate subject {s.subject_id!r}")
            seen.add(s.subject_id)

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def labels(self) -> list[int]:
        return [int(s.label) for s in self.subjects]

    def require_trainable(self):
        if not self.subjects:
            raise CohortError("cohort is empty")
        labels = set(self.labels)
        if labels != {0, 1}:
            raise CohortError("cohort needs both PTE and non-PTE subjects")

    def subset(self, predicate) -> "Cohort":
        return replace(self, subjects=tuple(s for s in self.subjects if predicate(s)))


def apply_inclusion(raw: Cohort) -> Cohort:
    """Keep subjects without prior epilepsy and with a definite PTE outcome.

    Subjects whose ``raw_outcome`` is already resolved (``None``) are treated
    as definite, which makes the filter idempotent.
    """
    kept = []
    for s in raw.subjects:
        if s.history.prior_epilepsy is not False:
            continue
        outcome = s.raw_outcome
        if outcome is None:
            kept.append(s)
        elif outcome in (TriState.PRESENT, TriState.ABSENT):
            kept.append(replace(s, label=outcome is TriState.PRESENT, raw_outcome=None))
    return replace(raw, subjects=tuple(kept))
