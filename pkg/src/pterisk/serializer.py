"""Render each clinical aspect of a subject as a templated paragraph."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

from .cohort import CT_FINDINGS, Subject, TriState

MISSING = "NOT_REPORTED"


class AspectId(str, enum.Enum):
    GCS = "gcs"
    HOSPITAL_COURSE = "hospital_course"
    CT_FINDINGS = "ct_findings"
    IMAGING_NOTES = "imaging_notes"
    LABS = "labs"
    HISTORY_DEMOGRAPHICS = "history_demographics"


ASPECTS = tuple(AspectId)

CONTEXT_TAGS = {
    AspectId.GCS: "Neurological Exam (GCS)",
    AspectId.HOSPITAL_COURSE: "Hospital Course",
    AspectId.CT_FINDINGS: "Radiology Report (CT)",
    AspectId.IMAGING_NOTES: "Radiology Report (Brain)",
    AspectId.LABS: "Laboratory results",
    AspectId.HISTORY_DEMOGRAPHICS: "Patient Demographics",
}
COMBINED_TAG = "Combined Clinical Record"

# qualitative labels appended to a GCS total, e.g. "3-Deep Coma"
GCS_DESCRIPTORS = {3: "Deep Coma"}

CT_NAMES = {
    "contusion": "Contusion",
    "epidural_hematoma": "Epidural Hematoma",
    "intracerebral_hemorrhage": "Intracerebral Hemorrhage",
    "skull_fracture": "Skull Fracture",
    "subarachnoid_hemorrhage": "Subarachnoid Hemorrhage",
}

# rendering order of the lab paragraph
LAB_NAMES = (
    ("creatinine", "Creatinine"),
    ("hemoglobin", "Hemoglobin"),
    ("lactate", "Lactate"),
    ("paco2", "PaCO2"),
)

HISTORY_NAMES = (
    ("prior_epilepsy", "prior epilepsy"),
    ("prior_seizures", "prior seizures"),
    ("neurodegenerative", "neurodegenerative disease"),
    ("prior_neuro_illness", "prior neurological illness"),
    ("tia_stroke", "TIA or stroke"),
    ("anticoagulant", "anticoagulant use"),
    ("antiplatelet", "antiplatelet use"),
)


@dataclass(frozen=True)
class AspectParagraph:
    aspect: object  # AspectId, or the string "combined" for the concatenated variant
    context_tag: str
    text: str

    def __post_init__(self):
        if not self.text.startswith(self.context_tag + ": "):
            raise ValueError("paragraph text must start with its context tag")
        if "\n" in self.text or "\r" in self.text:
            raise ValueError("paragraph text must be a single line")


def _clean(text: str) -> str:
    return " ".join(text.split())


def _int(value) -> str:
    return MISSING if value is None else str(int(value))


def _duration(value) -> str:
    return MISSING if value is None else f"{float(value):.1f}"


def _measure(value) -> str:
    """Lab values and lab times: at most two decimals, no padding.

    Decimal inputs keep their recorded precision (``Decimal("23.70")`` renders
    as ``23.70``); floats render in shortest form after rounding.
    """
    if value is None:
        return MISSING
    if isinstance(value, Decimal):
        if value.as_tuple().exponent < -2:
            value = value.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)
        return str(value)
    if isinstance(value, int):
        return str(value)
    return repr(round(float(value), 2) + 0.0)


def _gcs(subject: Subject) -> str:
    g = subject.gcs

    def total(v):
        if v is None:
            return MISSING
        desc = GCS_DESCRIPTORS.get(int(v))
        return f"{int(v)}-{desc}" if desc else str(int(v))

    return (
        f"Worst Total {total(g.total_worst)}, Best {total(g.total_best)}. "
        f"Components (Worst-Best): Eye {_int(g.eye_worst)}-{_int(g.eye_best)}, "
        f"Motor {_int(g.motor_worst)}-{_int(g.motor_best)}, "
        f"Verbal {_int(g.verbal_worst)}-{_int(g.verbal_best)}."
    )


def _hospital_course(subject: Subject) -> str:
    c = subject.course
    parts = []
    if c.icu_admitted:
        parts.append(f"ICU stay {_duration(c.icu_days)} days.")
    else:
        parts.append("No ICU admission.")
    if c.surgery_performed:
        parts.append(f"Cranial surgery performed ({_clean(c.surgery_type) if c.surgery_type else MISSING}).")
        parts.append(f"Time to surgery {_duration(c.hours_to_surgery)} hours.")
    else:
        parts.append("No cranial surgery.")
    if c.acute_seizure_7d:
        parts.append("Had seizure within 7 days of injury.")
    else:
        parts.append("No seizure within 7 days of injury.")
    if c.operative_note and c.operative_note.strip():
        parts.append(f"Operative note: {_clean(c.operative_note)}")
    return " ".join(parts)


def _ct_findings(subject: Subject) -> str:
    ct = subject.ct
    by_state = {state: [CT_NAMES[n] for n in CT_FINDINGS if getattr(ct, n) is state] for state in TriState}
    parts = []
    if len(by_state[TriState.NOT_REPORTED]) == len(CT_FINDINGS):
        parts.append(f"Findings: {MISSING}.")
    else:
        present = by_state[TriState.PRESENT]
        parts.append(f"Findings: {', '.join(present) if present else 'None'}.")
        for state, label in (
            (TriState.ABSENT, "Absent"),
            (TriState.INDETERMINATE, "Indeterminate"),
            (TriState.NOT_REPORTED, MISSING),
        ):
            if by_state[state]:
                parts.append(f"{label}: {', '.join(by_state[state])}.")
    if ct.marshall_score is not None:
        parts.append(f"Marshall CT score {int(ct.marshall_score)}.")
    return " ".join(parts)


def _imaging_notes(subject: Subject) -> str:
    notes = [_clean(t) for t in (subject.imaging.ct_report, subject.imaging.mri_report) if t and t.strip()]
    return " ".join(notes) if notes else f"{MISSING}."


def _labs(subject: Subject) -> str:
    parts = []
    for field, name in LAB_NAMES:
        s = getattr(subject.labs, field)
        if s is None:
            parts.append(f"{name} {MISSING}.")
        else:
            parts.append(
                f"{name} max value {_measure(s.max)} occurred {_measure(s.time_of_max)} days after injury, "
                f"last measurement {_measure(s.last)}, std is {_measure(s.std)}."
            )
    return " ".join(parts)


def _history_demographics(subject: Subject) -> str:
    h = subject.history
    race = _clean(h.race) if h.race else MISSING
    sex = _clean(h.sex) if h.sex else MISSING
    positive = [label for f, label in HISTORY_NAMES if getattr(h, f) is True]
    unknown = [label for f, label in HISTORY_NAMES if getattr(h, f) is None]
    if positive:
        history = f"History of {', '.join(positive)}."
    else:
        history = "No neurological history or anticoagulant/antiplatelet use."
    if unknown:
        history += f" {MISSING}: {', '.join(unknown)}."
    return f"{h.age_years}-year-old {race} {sex}. Medical History: {history}"


_RENDERERS = {
    AspectId.GCS: _gcs,
    AspectId.HOSPITAL_COURSE: _hospital_course,
    AspectId.CT_FINDINGS: _ct_findings,
    AspectId.IMAGING_NOTES: _imaging_notes,
    AspectId.LABS: _labs,
    AspectId.HISTORY_DEMOGRAPHICS: _history_demographics,
}


def serialize_aspect(subject: Subject, aspect) -> AspectParagraph:
    aspect = AspectId(aspect)
    tag = CONTEXT_TAGS[aspect]
    body = _RENDERERS[aspect](subject)
    return AspectParagraph(aspect=aspect, context_tag=tag, text=_clean(f"{tag}: {body}"))


def serialize_all(subject: Subject) -> list[AspectParagraph]:
    return [serialize_aspect(subject, a) for a in ASPECTS]


def concatenate_paragraphs(paragraphs: Sequence[AspectParagraph]) -> AspectParagraph:
    """Join the six aspect paragraphs of one subject into a single paragraph."""
    if len(paragraphs) != len(ASPECTS):
        raise ValueError(f"expected {len(ASPECTS)} paragraphs, got {len(paragraphs)}")
    by_aspect = {}
    for p in paragraphs:
        aspect = AspectId(p.aspect)
        if aspect in by_aspect:
            raise ValueError(f"duplicate aspect {aspect.value}")
        by_aspect[aspect] = p
    text = " ".join(by_aspect[a].text for a in ASPECTS)
    return AspectParagraph(aspect="combined", context_tag=COMBINED_TAG, text=f"{COMBINED_TAG}: {text}")


def paragraph_records(cohort: Iterable[Subject]) -> list[dict]:
    records = []
    for subject in cohort:
        for p in serialize_all(subject):
            records.append(
                {"subject_id": subject.subject_id, "aspect": p.aspect.value, "context_tag": p.context_tag, "text": p.text}
            )
    return records


def dump_paragraphs(records: Iterable[dict]) -> str:
    return "".join(
        json.dumps({k: r[k] for k in ("subject_id", "aspect", "context_tag", "text")}, ensure_ascii=False) + "\n"
        for r in records
    )


def load_paragraphs(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            missing = {"subject_id", "aspect", "context_tag", "text"} - set(rec)
            if missing:
                raise ValueError(f"line {i}: missing keys {sorted(missing)}")
            out.append(rec)
    return out
