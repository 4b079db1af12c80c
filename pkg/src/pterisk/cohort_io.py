"""Reading and writing cohorts.

Two on-disk layouts are supported:

``csv``
    One row per subject, comma separated, UTF-8, header row. Column names are
    the dotted paths listed in :data:`CSV_COLUMNS` (``gcs.total_worst``,
    ``labs.creatinine.max`` ...). Empty cells and ``NOT_REPORTED`` mean missing.
    The ``outcome`` column holds the raw PTE diagnosis
    (present/absent/indeterminate/NOT_REPORTED, or yes/no).

``jsonl``
    One JSON object per line mirroring :class:`~pterisk.cohort.Subject`, with
    nested objects ``gcs``, ``course``, ``ct``, ``labs``, ``history`` and
    ``imaging``. Lab entries are either ``null`` or a summary object.

An optional long-format lab table (``subject_id,analyte,time_days,value``)
replaces the lab summaries of the subjects it mentions.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from collections import defaultdict
from dataclasses import fields
from pathlib import Path

from .cohort import (
    CT_FINDINGS,
    HISTORY_FLAGS,
    LAB_ANALYTES,
    Cohort,
    CohortError,
    CtFindings,
    GcsRecord,
    HistoryDemographics,
    HospitalCourse,
    ImagingNotes,
    LabPanel,
    SeriesSummary,
    Subject,
    TriState,
    aggregate_series,
)

log = logging.getLogger(__name__)

MISSING_TOKEN = "NOT_REPORTED"
SUMMARY_FIELDS = ("first", "last", "min", "max", "mean", "std", "time_of_max")

GCS_COLUMNS = [f"gcs.{f.name}" for f in fields(GcsRecord)]
COURSE_COLUMNS = [f"course.{f.name}" for f in fields(HospitalCourse)]
CT_COLUMNS = [f"ct.{name}" for name in CT_FINDINGS] + ["ct.marshall_score"]
LAB_COLUMNS = [f"labs.{a}.{s}" for a in LAB_ANALYTES for s in SUMMARY_FIELDS]
HISTORY_COLUMNS = ["history.age_years", "history.sex", "history.race"] + [f"history.{h}" for h in HISTORY_FLAGS]
IMAGING_COLUMNS = ["imaging.ct_report", "imaging.mri_report"]
CSV_COLUMNS = (
    ["subject_id", "outcome"]
    + GCS_COLUMNS
    + COURSE_COLUMNS
    + CT_COLUMNS
    + LAB_COLUMNS
    + HISTORY_COLUMNS
    + IMAGING_COLUMNS
)

_INT_FIELDS = set(GCS_COLUMNS) | {"ct.marshall_score", "history.age_years"}
_FLOAT_FIELDS = {"course.icu_days", "course.hours_to_surgery"} | set(LAB_COLUMNS)
_REQUIRED_BOOL = {"course.icu_admitted", "course.surgery_performed", "course.acute_seizure_7d"}
_REQUIRED = _REQUIRED_BOOL | {"history.age_years"}
_OPTIONAL_BOOL = {f"history.{h}" for h in HISTORY_FLAGS}
_TRISTATE = {f"ct.{name}" for name in CT_FINDINGS}
_TEXT = {"course.surgery_type", "course.operative_note", "history.sex", "history.race"} | set(IMAGING_COLUMNS)

_TRUE = {"yes", "true", "1", "y", "present"}
_FALSE = {"no", "false", "0", "n", "absent"}


def _is_missing(cell) -> bool:
    return cell is None or (isinstance(cell, str) and cell.strip() in ("", MISSING_TOKEN))


def _parse_bool(cell):
    if isinstance(cell, bool):
        return cell
    text = str(cell).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a yes/no value: {cell!r}")


def _parse_int(cell):
    if isinstance(cell, bool):
        raise ValueError("boolean where integer expected")
    value = float(cell)
    if not value.is_integer():
        raise ValueError(f"not an integer: {cell!r}")
    return int(value)


def _parse_float(cell):
    value = float(cell)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number: {cell!r}")
    return value


def _parse_cell(column, cell):
    if column in _TRISTATE:
        return TriState.parse(None if _is_missing(cell) else cell)
    if _is_missing(cell):
        if column in _REQUIRED:
            raise ValueError("required value is missing")
        return None
    if column in _INT_FIELDS:
        return _parse_int(cell)
    if column in _FLOAT_FIELDS:
        return _parse_float(cell)
    if column in _REQUIRED_BOOL or column in _OPTIONAL_BOOL:
        return _parse_bool(cell)
    if column in _TEXT:
        return str(cell)
    raise KeyError(column)


def _parse_outcome(cell):
    if _is_missing(cell):
        return TriState.NOT_REPORTED
    return TriState.parse(cell)


def _subject_from_flat(flat: dict, where: str) -> Subject:
    """Build a Subject from a ``{dotted column: raw cell}`` mapping."""
    flat = {**dict.fromkeys(CSV_COLUMNS), **flat}
    values = {}
    for column, cell in flat.items():
        if column in ("subject_id", "outcome"):
            continue
        try:
            values[column] = _parse_cell(column, cell)
        except (ValueError, TypeError) as exc:
            raise CohortError(f"{where}, column {column!r}: {exc}") from None

    def group(prefix):
        return {k[len(prefix) + 1:]: v for k, v in values.items() if k.startswith(prefix + ".")}

    labs = {}
    for analyte in LAB_ANALYTES:
        parts = {s: values.get(f"labs.{analyte}.{s}") for s in SUMMARY_FIELDS}
        present = [s for s, v in parts.items() if v is not None]
        if not present:
            labs[analyte] = None
        elif len(present) != len(SUMMARY_FIELDS):
            missing = sorted(set(SUMMARY_FIELDS) - set(present))
            raise CohortError(f"{where}, column 'labs.{analyte}.{missing[0]}': incomplete lab summary")
        else:
            labs[analyte] = parts

    sid = flat.get("subject_id")
    if _is_missing(sid):
        raise CohortError(f"{where}, column 'subject_id': missing subject id")
    try:
        return Subject(
            subject_id=str(sid).strip(),
            gcs=GcsRecord(**group("gcs")),
            course=HospitalCourse(**group("course")),
            ct=CtFindings(**group("ct")),
            labs=LabPanel(**{a: (SeriesSummary(**v) if v else None) for a, v in labs.items()}),
            history=HistoryDemographics(**group("history")),
            imaging=ImagingNotes(**group("imaging")),
            label=False,
            raw_outcome=_parse_outcome(flat.get("outcome")),
        )
    except CohortError as exc:
        raise CohortError(f"{where}: {exc}") from None


def _flatten_record(record: dict) -> dict:
    flat = {"subject_id": record.get("subject_id"), "outcome": record.get("outcome")}
    for section in ("gcs", "course", "ct", "history", "imaging"):
        for key, value in (record.get(section) or {}).items():
            flat[f"{section}.{key}"] = value
    for analyte, summary in (record.get("labs") or {}).items():
        if summary is None:
            continue
        for key, value in summary.items():
            flat[f"labs.{analyte}.{key}"] = value
    return flat


def _warn_unknown(columns, where):
    unknown = [c for c in columns if c not in CSV_COLUMNS]
    if unknown:
        log.warning("%s: ignoring unknown columns %s", where, ", ".join(unknown))
    return set(unknown)


def load_cohort(path, format: str = "csv", labs_path=None) -> Cohort:
    """Load an ingestion-format cohort file.

    Subjects keep their raw outcome; run :func:`~pterisk.cohort.apply_inclusion`
    afterwards to obtain labels.
    """
    path = Path(path)
    subjects = []
    if format == "csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "subject_id" not in reader.fieldnames:
                raise CohortError(f"{path}: missing 'subject_id' header")
            unknown = _warn_unknown(reader.fieldnames, str(path))
            for i, row in enumerate(reader, start=2):
                if None in row:
                    raise CohortError(f"row {i}: more cells than header columns")
                flat = {k: v for k, v in row.items() if k not in unknown}
                subjects.append(_subject_from_flat(flat, f"row {i}"))
    elif format == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for i, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CohortError(f"row {i}: invalid JSON ({exc.msg})") from None
                flat = _flatten_record(record)
                unknown = _warn_unknown(flat, f"{path} row {i}")
                flat = {k: v for k, v in flat.items() if k not in unknown}
                subjects.append(_subject_from_flat(flat, f"row {i}"))
    else:
        raise CohortError(f"unknown cohort format {format!r}")

    ids = set()
    for s in subjects:
        if s.subject_id in ids:
            raise CohortError(f"duplicate subject {s.subject_id!r}")
        ids.add(s.subject_id)

    if labs_path is not None:
        subjects = _attach_long_labs(subjects, Path(labs_path))
    return Cohort(subjects=tuple(subjects), provenance="ingested")


def load_long_labs(path) -> dict:
    """Read a long-format lab table into ``{subject_id: {analyte: SeriesSummary}}``."""
    series = defaultdict(lambda: defaultdict(list))
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        needed = {"subject_id", "analyte", "time_days", "value"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise CohortError(f"{path}: lab table needs columns {sorted(needed)}")
        for i, row in enumerate(reader, start=2):
            analyte = row["analyte"].strip().lower()
            if analyte not in LAB_ANALYTES:
                raise CohortError(f"row {i}, column 'analyte': unknown analyte {row['analyte']!r}")
            try:
                t = _parse_float(row["time_days"])
            except ValueError as exc:
                raise CohortError(f"row {i}, column 'time_days': {exc}") from None
            try:
                v = _parse_float(row["value"])
            except ValueError as exc:
                raise CohortError(f"row {i}, column 'value': {exc}") from None
            series[row["subject_id"].strip()][analyte].append((t, v))
    return {
        sid: {a: aggregate_series(m) for a, m in per.items()}
        for sid, per in series.items()
    }


def _attach_long_labs(subjects, path):
    from dataclasses import replace

    table = load_long_labs(path)
    known = {s.subject_id for s in subjects}
    stray = sorted(set(table) - known)
    if stray:
        log.warning("%s: lab rows for unknown subjects %s ignored", path, ", ".join(stray[:5]))
    out = []
    for s in subjects:
        if s.subject_id in table:
            s = replace(s, labs=replace(s.labs, **table[s.subject_id]))
        out.append(s)
    return out


def _outcome_cell(subject: Subject) -> str:
    if subject.raw_outcome is None:
        return "present" if subject.label else "absent"
    if subject.raw_outcome is TriState.NOT_REPORTED:
        return MISSING_TOKEN
    return subject.raw_outcome.value


def subject_to_record(subject: Subject) -> dict:
    """Nested JSON-ready mapping of one subject (the ``jsonl`` layout)."""
    def section(obj):
        out = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            out[f.name] = v.value if isinstance(v, TriState) else v
        return out

    labs = {}
    for analyte in LAB_ANALYTES:
        summary = getattr(subject.labs, analyte)
        labs[analyte] = None if summary is None else {s: float(getattr(summary, s)) for s in SUMMARY_FIELDS}
    return {
        "subject_id": subject.subject_id,
        "outcome": _outcome_cell(subject),
        "gcs": section(subject.gcs),
        "course": section(subject.course),
        "ct": section(subject.ct),
        "labs": labs,
        "history": section(subject.history),
        "imaging": section(subject.imaging),
    }


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, TriState):
        return MISSING_TOKEN if value is TriState.NOT_REPORTED else value.value
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def subject_to_row(subject: Subject) -> dict:
    record = subject_to_record(subject)
    row = {"subject_id": subject.subject_id, "outcome": record["outcome"]}
    for section in ("gcs", "course", "ct", "history", "imaging"):
        obj = getattr(subject, section)
        for f in fields(obj):
            row[f"{section}.{f.name}"] = _csv_cell(getattr(obj, f.name))
    for analyte in LAB_ANALYTES:
        summary = getattr(subject.labs, analyte)
        for s in SUMMARY_FIELDS:
            row[f"labs.{analyte}.{s}"] = "" if summary is None else _csv_cell(float(getattr(summary, s)))
    return row


def atomic_write_text(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_cohort(cohort: Cohort, format: str = "csv") -> str:
    if format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for s in cohort.subjects:
            writer.writerow(subject_to_row(s))
        return buf.getvalue()
    if format == "jsonl":
        return "".join(json.dumps(subject_to_record(s), sort_keys=True) + "\n" for s in cohort.subjects)
    raise CohortError(f"unknown cohort format {format!r}")


def write_cohort(cohort: Cohort, path, format: str = "csv"):
    atomic_write_text(path, dump_cohort(cohort, format))
