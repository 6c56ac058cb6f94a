"""Study-level dose-toxicity tables: data model, CSV ingestion and summaries.

A study is a set of dose groups; each group records the dose, the number of
patients treated at that dose, and the number of dose-limiting toxicities
(DLTs) observed among them.  The CSV schema is::

    study_id,label,year,group_tag,dose,n_patients,n_dlt

with ``year`` and ``group_tag`` optional (may be empty).  Rows belonging to
the same ``study_id`` form one dataset; duplicate (study, dose) rows are
merged by summing patients and events.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Optional

from .errors import ValidationError

CSV_HEADER = ("study_id", "label", "year", "group_tag", "dose", "n_patients", "n_dlt")


@dataclass(frozen=True)
class DoseGroup:
    """One dose level of one study: `n_dlt` events among `n_patients`."""

    dose: float
    n_patients: int
    n_dlt: int

    def __post_init__(self):
        if not (self.dose > 0):
            raise ValidationError(f"dose must be positive, got {self.dose!r}")
        if self.n_patients < 0 or self.n_dlt < 0:
            raise ValidationError("patient and event counts must be non-negative")
        if self.n_dlt > self.n_patients:
            raise ValidationError(
                f"n_dlt={self.n_dlt} exceeds n_patients={self.n_patients} at dose {self.dose}"
            )


@dataclass(frozen=True)
class DoseToxicityDataset:
    """All dose groups of one study, sorted by strictly increasing dose."""

    study_id: str
    label: str = ""
    year: Optional[int] = None
    group_tag: Optional[str] = None
    groups: tuple[DoseGroup, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ValidationError(f"study {self.study_id!r} has no dose groups")
        doses = [g.dose for g in self.groups]
        if any(b <= a for a, b in zip(doses, doses[1:])):
            raise ValidationError(
                f"study {self.study_id!r}: doses must be strictly increasing, got {doses}"
            )

    @property
    def doses(self) -> tuple[float, ...]:
        return tuple(g.dose for g in self.groups)

    @property
    def n_patients(self) -> tuple[int, ...]:
        return tuple(g.n_patients for g in self.groups)

    @property
    def n_dlt(self) -> tuple[int, ...]:
        return tuple(g.n_dlt for g in self.groups)


def summarize(ds: DoseToxicityDataset) -> tuple[int, int, int]:
    """Return (number of doses, total patients, total DLT events)."""
    return (
        len(ds.groups),
        sum(g.n_patients for g in ds.groups),
        sum(g.n_dlt for g in ds.groups),
    )


def _parse_row(row: dict, line_no: int):
    def bad(msg):
        return ValidationError(f"line {line_no}: {msg}")

    study_id = (row.get("study_id") or "").strip()
    if not study_id:
        raise bad("missing study_id")
    year_text = (row.get("year") or "").strip()
    try:
        year = int(year_text) if year_text else None
    except ValueError:
        raise bad(f"invalid year {year_text!r}") from None
    tag = (row.get("group_tag") or "").strip() or None
    try:
        dose = float(row["dose"])
        n = int(row["n_patients"])
        r = int(row["n_dlt"])
    except (KeyError, TypeError, ValueError):
        raise bad(f"malformed numeric fields in {row!r}") from None
    try:
        group = DoseGroup(dose=dose, n_patients=n, n_dlt=r)
    except ValidationError as exc:
        raise bad(str(exc)) from None
    return study_id, (row.get("label") or "").strip(), year, tag, group


def parse_csv(source: str | IO[str]) -> list[DoseToxicityDataset]:
    """Parse the dose-toxicity CSV schema into one dataset per study.

    ``source`` is CSV text or an open text stream.  Studies appear in the
    output in order of first appearance; within a study, groups are sorted
    by dose and duplicate (study, dose) rows are merged by summing counts.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise ValidationError("empty input: missing CSV header")
    fields = tuple(name.strip() for name in reader.fieldnames)
    if fields != CSV_HEADER:
        raise ValidationError(
            f"unexpected CSV header {fields!r}, expected {CSV_HEADER!r}"
        )

    order: list[str] = []
    meta: dict[str, tuple] = {}
    counts: dict[str, dict[float, list[int]]] = {}
    for line_no, row in enumerate(reader, start=2):
        if all((v or "").strip() == "" for v in row.values()):
            continue
        study_id, label, year, tag, group = _parse_row(row, line_no)
        if study_id not in meta:
            order.append(study_id)
            meta[study_id] = (label, year, tag)
            counts[study_id] = {}
        per_dose = counts[study_id].setdefault(group.dose, [0, 0])
        per_dose[0] += group.n_patients
        per_dose[1] += group.n_dlt

    datasets = []
    for study_id in order:
        label, year, tag = meta[study_id]
        groups = [
            DoseGroup(dose=d, n_patients=n, n_dlt=r)
            for d, (n, r) in sorted(counts[study_id].items())
        ]
        datasets.append(
            DoseToxicityDataset(
                study_id=study_id, label=label, year=year, group_tag=tag, groups=groups
            )
        )
    return datasets


def to_csv(datasets: Iterable[DoseToxicityDataset]) -> str:
    """Serialize datasets back to the CSV schema (inverse of :func:`parse_csv`)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for ds in datasets:
        for g in ds.groups:
            writer.writerow(
                [
                    ds.study_id,
                    ds.label,
                    "" if ds.year is None else ds.year,
                    ds.group_tag or "",
                    format(g.dose, "g"),
                    g.n_patients,
                    g.n_dlt,
                ]
            )
    return out.getvalue()


def load_example(name: str) -> list[DoseToxicityDataset]:
    """Load one of the bundled example tables ("sorafenib" or "irinotecan")."""
    path = resources.files("mtdmeta.data").joinpath(f"{name}.csv")
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"no bundled dataset named {name!r}") from None
    return parse_csv(text)
