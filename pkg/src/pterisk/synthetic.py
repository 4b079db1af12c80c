"""Shape-matched synthetic TBI cohorts with a planted logistic PTE risk.

Every subject gets a latent injury severity ``z ~ N(0, 1)``. Severity drives
the GCS, ICU admission and stay, cranial surgery, acute seizures, CT findings
and labs. The PTE risk logit is

    risk = seizure_coef * acute_seizure
         + gcs_coef * (15 - worst GCS total)
         + surgery_coef * surgery_performed
         + icu_day_coef * icu_days
         + note_coef * u

where ``u ~ N(0, 1)`` is a hidden factor that is only visible through the
wording of operative notes and imaging reports. Each note phrase is drawn
from the high-risk pool with probability
``sigmoid(note_sharpness * (u + note_severity * z))``. Labels are the
``round(prevalence * n)`` subjects with the largest ``risk + logistic noise``,
which is a logistic model whose intercept is fixed by the requested prevalence.

With ``signal="text_only"`` the risk is ``2 * note_coef * u`` alone, structured
fields carry no label information, and every subject gets an imaging report.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

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
    Subject,
    TriState,
    aggregate_series,
)


@dataclass(frozen=True)
class GeneratorConfig:
    signal: str = "clinical"
    seizure_coef: float = 3.2
    gcs_coef: float = 0.42
    surgery_coef: float = 2.4
    icu_day_coef: float = 0.18
    note_coef: float = 1.5
    note_sharpness: float = 2.5
    note_phrases: int = 4
    note_severity: float = 1.0
    mask_fraction: float = 0.05
    imaging_fraction: float = 0.41
    indeterminate_rate: float = 0.03


# (low-risk pool, high-risk pool)
OPERATIVE_PHRASES = (
    (
        "small extra-axial collection drained",
        "hemostasis achieved without difficulty",
        "brain relaxed well after evacuation",
        "no cortical injury identified",
        "uneventful closure of the dura",
        "minimal blood loss",
    ),
    (
        "acute subdural hematoma evacuated with marked cortical swelling",
        "depressed skull fracture elevated with underlying dural laceration",
        "hemorrhagic frontal contusion debrided",
        "cortical laceration repaired",
        "brain herniating through the dural opening",
        "temporal lobe contusion partially resected",
    ),
)
IMAGING_PHRASES = (
    (
        "No acute intracranial abnormality.",
        "Brain parenchyma is unremarkable.",
        "No evidence of hemorrhage or mass effect.",
        "Ventricles are normal in size.",
        "Mild chronic small vessel ischemic changes.",
    ),
    (
        "Multiple foci of susceptibility artifact consistent with diffuse axonal injury.",
        "Encephalomalacia in the temporal lobe.",
        "Hemosiderin staining along the frontal cortex.",
        "Gliosis adjacent to the prior contusion.",
        "Cortical laminar necrosis in the parietal lobe.",
    ),
)
SURGERY_TYPES = (
    "Craniotomy",
    "Decompressive craniectomy",
    "Burr hole evacuation",
    "External ventricular drain",
    "Elevation of depressed skull fracture",
)
RACES = (
    "White",
    "Black",
    "Asian",
    "American Indian or Alaska Native",
    "Native Hawaiian or Pacific Islander",
)
RACE_P = (0.70, 0.15, 0.08, 0.04, 0.03)

# baseline mean, severity slope, noise sd
LAB_MODEL = {
    "creatinine": (75.0, 8.0, 15.0),
    "lactate": (1.6, 0.7, 0.6),
    "hemoglobin": (13.2, -1.0, 1.3),
    "paco2": (5.1, 0.3, 0.5),
}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _r(x, nd=1):
    return float(round(float(x), nd))


def _note(rng, pools, q, n_phrases, sep, sharpness):
    low, high = pools
    phrases = []
    for _ in range(n_phrases):
        pool = high if rng.random() < _sigmoid(sharpness * q) else low
        phrases.append(pool[int(rng.integers(len(pool)))])
    return sep.join(phrases)


def generate_synthetic_cohort(
    seed: int, n: int = 256, prevalence: float = 58 / 256, config: GeneratorConfig = GeneratorConfig()
) -> Cohort:
    """Deterministic synthetic cohort with exactly ``round(prevalence * n)`` positives."""
    if not (0.0 < prevalence < 1.0):
        raise CohortError("prevalence must lie in (0, 1)")
    if n < 20:
        raise CohortError("synthetic cohort needs n >= 20")
    if prevalence * n < 5:
        raise CohortError("synthetic cohort needs at least 5 expected positives")
    n_pos = int(round(prevalence * n))
    if not (0 < n_pos < n):
        raise CohortError("prevalence leaves a single class")
    if config.signal not in ("clinical", "text_only"):
        raise CohortError(f"unknown signal mode {config.signal!r}")
    text_only = config.signal == "text_only"

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    u = rng.standard_normal(n)
    noise = rng.logistic(size=n)

    drafts = []
    for i in range(n):
        sev = float(z[i])
        gcs_worst = int(np.clip(round(12.0 - 4.0 * sev + rng.normal(0.0, 1.5)), 3, 15))
        gcs_best = int(min(15, gcs_worst + round((15 - gcs_worst) * rng.random() ** 0.5)))

        def parts(total):
            return (
                int(np.clip(round(1 + (total - 3) * 3 / 12), 1, 4)),
                int(np.clip(round(1 + (total - 3) * 4 / 12), 1, 5)),
                int(np.clip(round(1 + (total - 3) * 5 / 12), 1, 6)),
            )

        ew, vw, mw = parts(gcs_worst)
        eb, vb, mb = parts(gcs_best)
        icu = bool(rng.random() < _sigmoid(1.8 * sev))
        icu_days = _r(0.5 + rng.gamma(2.0, 1.5 + 2.0 * max(sev, 0.0))) if icu else None
        surgery = bool(rng.random() < _sigmoid(1.6 * sev - 1.0))
        seizure = bool(rng.random() < _sigmoid(0.9 * sev - 0.7))
        surgery_type = SURGERY_TYPES[int(rng.integers(len(SURGERY_TYPES)))] if surgery else None
        hours = _r(rng.exponential(10.0)) if surgery else None

        ct = {}
        for j, name in enumerate(CT_FINDINGS):
            p = _sigmoid(1.3 * sev - 0.3 + 0.2 * j)
            draw = rng.random()
            if rng.random() < config.indeterminate_rate:
                ct[name] = TriState.INDETERMINATE
            else:
                ct[name] = TriState.PRESENT if draw < p else TriState.ABSENT
        marshall = int(np.clip(round(2.0 + 1.2 * sev + rng.normal(0.0, 0.8)), 1, 6))

        labs = {}
        for analyte in LAB_ANALYTES:
            base, slope, sd = LAB_MODEL[analyte]
            k = int(rng.integers(1, 6))
            times = np.sort(np.round(rng.uniform(0.0, 7.0, size=k), 2))
            values = np.round(base + slope * sev + rng.normal(0.0, sd, size=k), 2)
            labs[analyte] = aggregate_series(list(zip(times.tolist(), values.tolist())))

        age = int(np.clip(round(rng.normal(42.0, 18.0)), 18, 90))
        sex = "female" if rng.random() < 0.3 else "male"
        race = RACES[int(rng.choice(len(RACES), p=RACE_P))]
        history = {flag: bool(rng.random() < 0.06) for flag in HISTORY_FLAGS}
        history["prior_epilepsy"] = False

        q = float(u[i]) + config.note_severity * sev
        op_note = None
        if surgery:
            op_note = _note(rng, OPERATIVE_PHRASES, q, config.note_phrases, "; ", config.note_sharpness).capitalize() + "."
        has_imaging = text_only or rng.random() < config.imaging_fraction
        report = _note(rng, IMAGING_PHRASES, q, config.note_phrases, " ", config.note_sharpness) if has_imaging else None
        use_mri = bool(rng.random() < 0.5)

        drafts.append(
            dict(
                gcs=GcsRecord(gcs_worst, gcs_best, ew, eb, vw, vb, mw, mb),
                course=HospitalCourse(icu, icu_days, surgery, surgery_type, hours, seizure, op_note),
                ct=CtFindings(**ct, marshall_score=marshall),
                labs=labs,
                history=dict(age_years=age, sex=sex, race=race, **history),
                imaging=ImagingNotes(ct_report=None if use_mri else report, mri_report=report if use_mri else None),
            )
        )

    if text_only:
        risk = config.note_coef * 2.0 * u
    else:
        risk = np.array(
            [
                config.seizure_coef * d["course"].acute_seizure_7d
                + config.gcs_coef * (15 - d["gcs"].total_worst)
                + config.surgery_coef * d["course"].surgery_performed
                + config.icu_day_coef * (d["course"].icu_days or 0.0)
                for d in drafts
            ]
        ) + config.note_coef * u
    order = np.argsort(-(risk + noise), kind="stable")
    labels = np.zeros(n, dtype=bool)
    labels[order[:n_pos]] = True

    if text_only:
        # structured fields must carry no label signal: shuffle them across subjects
        perm = rng.permutation(n)
        structured = [(drafts[j]["gcs"], drafts[j]["ct"], drafts[j]["labs"]) for j in perm]
        courses = [drafts[j]["course"] for j in rng.permutation(n)]
        for i, d in enumerate(drafts):
            d["gcs"], d["ct"], d["labs"] = structured[i]
            c = courses[i]
            d["course"] = replace(c, operative_note=None)

    subjects = []
    width = len(str(n))
    for i, d in enumerate(drafts):
        subjects.append(
            _mask(
                rng,
                Subject(
                    subject_id=f"SYN-{seed}-{i:0{width}d}",
                    gcs=d["gcs"],
                    course=d["course"],
                    ct=d["ct"],
                    labs=LabPanel(**d["labs"]),
                    history=HistoryDemographics(**d["history"]),
                    imaging=d["imaging"],
                    label=bool(labels[i]),
                ),
                config.mask_fraction,
            )
        )
    return Cohort(subjects=tuple(subjects), provenance="synthetic", generator_seed=seed)


def _mask(rng, s: Subject, frac: float) -> Subject:
    """Blank a random ``frac`` of optional fields (label-independent)."""
    if frac <= 0:
        return s

    def hit():
        return rng.random() < frac

    gcs = s.gcs
    if hit():
        gcs = replace(gcs, eye_worst=None, eye_best=None)
    if hit():
        gcs = replace(gcs, verbal_worst=None, verbal_best=None)
    if hit():
        gcs = replace(gcs, motor_worst=None, motor_best=None)
    course = s.course
    if course.icu_days is not None and hit():
        course = replace(course, icu_days=None)
    if course.hours_to_surgery is not None and hit():
        course = replace(course, hours_to_surgery=None)
    if course.surgery_type is not None and hit():
        course = replace(course, surgery_type=None)
    ct = s.ct
    for name in CT_FINDINGS:
        if hit():
            ct = replace(ct, **{name: TriState.NOT_REPORTED})
    if hit():
        ct = replace(ct, marshall_score=None)
    labs = s.labs
    for analyte in LAB_ANALYTES:
        if hit():
            labs = replace(labs, **{analyte: None})
    history = s.history
    for flag in HISTORY_FLAGS[1:]:
        if hit():
            history = replace(history, **{flag: None})
    if hit():
        history = replace(history, race=None)
    return replace(s, gcs=gcs, course=course, ct=ct, labs=labs, history=history)
