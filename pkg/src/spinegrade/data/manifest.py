"""Dataset manifests: the label, coordinate, series and patient CSV files."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DanglingReference, MalformedRow, MissingFile
from .images import read_pgm_header


class Severity(enum.IntEnum):
    NormalMild = 0
    Moderate = 1
    Severe = 2


class Condition(enum.Enum):
    SpinalCanalStenosis = "SpinalCanalStenosis"
    LeftNeuralForaminalNarrowing = "LeftNeuralForaminalNarrowing"
    RightNeuralForaminalNarrowing = "RightNeuralForaminalNarrowing"
    LeftSubarticularStenosis = "LeftSubarticularStenosis"
    RightSubarticularStenosis = "RightSubarticularStenosis"


class VertebralLevel(enum.Enum):
    L1L2 = "L1L2"
    L2L3 = "L2L3"
    L3L4 = "L3L4"
    L4L5 = "L4L5"
    L5S1 = "L5S1"


class Plane(enum.Enum):
    Axial = "Axial"
    Sagittal = "Sagittal"


class Weighting(enum.Enum):
    T1 = "T1"
    T2 = "T2"


class Sex(enum.Enum):
    F = "F"
    M = "M"
    Unknown = "Unknown"


TRAIN_HEADER = ["study_id", "series_id", "instance_id", "condition", "vertebral_level", "severity"]
COORDS_HEADER = ["study_id", "series_id", "instance_id", "x", "y"]
SERIES_HEADER = ["series_id", "plane", "weighting"]
PATIENTS_HEADER = ["study_id", "age_years", "sex"]


@dataclass(frozen=True)
class SampleRecord:
    study_id: str
    series_id: str
    instance_id: str
    condition: Condition
    vertebral_level: VertebralLevel
    severity: Severity
    coord: Optional[tuple[float, float]] = None

    @property
    def key(self):
        return f"{self.study_id}_{self.series_id}_{self.instance_id}"


@dataclass(frozen=True)
class SeriesDescription:
    series_id: str
    plane: Plane
    weighting: Weighting


@dataclass(frozen=True)
class PatientMetadata:
    age_years: float
    sex: Sex = Sex.Unknown


@dataclass
class DatasetManifest:
    samples: list[SampleRecord]
    series: dict[str, SeriesDescription]
    patients: dict[str, PatientMetadata]
    image_root: Path = field(default_factory=Path)

    def image_path(self, sample: SampleRecord) -> Path:
        return Path(self.image_root) / f"{sample.key}.pgm"

    def labels(self) -> np.ndarray:
        return np.array([int(s.severity) for s in self.samples], dtype=np.int64)


# "Normal/Mild" is accepted as the spelling used by the public label files
_SEVERITY_ALIASES = {
    "normalmild": Severity.NormalMild,
    "normal/mild": Severity.NormalMild,
    "moderate": Severity.Moderate,
    "severe": Severity.Severe,
}


def parse_severity(text: str) -> Severity:
    try:
        return _SEVERITY_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown severity {text!r}") from None


def _parse_enum(kind, text):
    try:
        return kind(text.strip())
    except ValueError:
        raise ValueError(f"unknown {kind.__name__} {text!r}") from None


def _read_rows(path, header):
    """Yield ``(line_number, row_dict)``; the header is line 1."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise MalformedRow(path, 1, "missing header row") from None
        if [h.strip() for h in first] != header:
            raise MalformedRow(path, 1, f"expected header {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(path, line, f"expected {len(header)} fields, got {len(row)}")
            yield line, dict(zip(header, (v.strip() for v in row)))


def load_manifest(train_csv, coords_csv, series_csv, image_root, patients_csv=None) -> DatasetManifest:
    """Load and cross-check the manifest files.

    ``patients_csv`` defaults to ``patients.csv`` beside ``train_csv``.
    Coordinates are checked against the image bounds when the image exists.
    """
    train_csv = Path(train_csv)
    if patients_csv is None:
        patients_csv = train_csv.parent / "patients.csv"

    series = {}
    for line, row in _read_rows(series_csv, SERIES_HEADER):
        try:
            desc = SeriesDescription(row["series_id"], _parse_enum(Plane, row["plane"]),
                                     _parse_enum(Weighting, row["weighting"]))
        except ValueError as exc:
            raise MalformedRow(series_csv, line, str(exc)) from None
        if desc.series_id in series:
            raise MalformedRow(series_csv, line, f"duplicate series_id {desc.series_id}")
        series[desc.series_id] = desc

    patients = {}
    for line, row in _read_rows(patients_csv, PATIENTS_HEADER):
        try:
            age = float(row["age_years"])
            if not np.isfinite(age) or age < 0:
                raise ValueError(f"bad age {row['age_years']!r}")
            patients[row["study_id"]] = PatientMetadata(age, _parse_enum(Sex, row["sex"]))
        except ValueError as exc:
            raise MalformedRow(patients_csv, line, str(exc)) from None

    coords = {}
    coord_lines = {}
    for line, row in _read_rows(coords_csv, COORDS_HEADER):
        try:
            xy = (float(row["x"]), float(row["y"]))
        except ValueError:
            raise MalformedRow(coords_csv, line, "non-numeric coordinate") from None
        key = (row["study_id"], row["series_id"], row["instance_id"])
        coords[key] = xy
        coord_lines[key] = line

    samples = []
    for line, row in _read_rows(train_csv, TRAIN_HEADER):
        try:
            severity = parse_severity(row["severity"])
            condition = _parse_enum(Condition, row["condition"])
            level = _parse_enum(VertebralLevel, row["vertebral_level"])
        except ValueError as exc:
            raise MalformedRow(train_csv, line, str(exc)) from None
        if row["series_id"] not in series:
            raise DanglingReference("series_id", row["series_id"])
        if row["study_id"] not in patients:
            raise DanglingReference("study_id", row["study_id"])
        key = (row["study_id"], row["series_id"], row["instance_id"])
        samples.append(SampleRecord(*key, condition, level, severity, coords.get(key)))

    manifest = DatasetManifest(samples, series, patients, Path(image_root))
    for s in samples:
        path = manifest.image_path(s)
        if s.coord is not None and path.exists():
            w, h = read_pgm_header(path)
            x, y = s.coord
            if not (0 <= x < w and 0 <= y < h):
                line = coord_lines[(s.study_id, s.series_id, s.instance_id)]
                raise MalformedRow(coords_csv, line, f"coordinate ({x}, {y}) outside {w}x{h} image")
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir):
    """Write the four manifest CSVs into ``out_dir`` (LF line endings)."""
    out_dir = Path(out_dir)
    rows = {
        "train.csv": (TRAIN_HEADER, [
            [s.study_id, s.series_id, s.instance_id, s.condition.value, s.vertebral_level.value,
             s.severity.name] for s in manifest.samples]),
        "coords.csv": (COORDS_HEADER, [
            [s.study_id, s.series_id, s.instance_id, repr(float(s.coord[0])), repr(float(s.coord[1]))]
            for s in manifest.samples if s.coord is not None]),
        "series.csv": (SERIES_HEADER, [
            [d.series_id, d.plane.value, d.weighting.value] for d in manifest.series.values()]),
        "patients.csv": (PATIENTS_HEADER, [
            [sid, repr(float(p.age_years)), p.sex.value] for sid, p in manifest.patients.items()]),
    }
    for name, (header, body) in rows.items():
        with open(out_dir / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(body)


# -- metadata features -------------------------------------------------------

AGE_CAP = 100.0
META_LAYOUT = (
    ["age"]
    + [f"sex_{s.value}" for s in (Sex.F, Sex.M)]
    + [f"level_{lv.value}" for lv in VertebralLevel]
    + [f"plane_{p.value}" for p in Plane]
    + [f"weighting_{w.value}" for w in Weighting]
)
META_DIM = len(META_LAYOUT)


def extract_metadata(record: SampleRecord, patient: PatientMetadata,
                     series: SeriesDescription) -> np.ndarray:
    """Fixed-length encoding: clamped age / 100 followed by one-hot groups.

    Unknown sex leaves the sex group all zero.
    """
    v = np.zeros(META_DIM)
    v[0] = min(max(patient.age_years, 0.0), AGE_CAP) / AGE_CAP
    if patient.sex is not Sex.Unknown:
        v[META_LAYOUT.index(f"sex_{patient.sex.value}")] = 1.0
    v[META_LAYOUT.index(f"level_{record.vertebral_level.value}")] = 1.0
    v[META_LAYOUT.index(f"plane_{series.plane.value}")] = 1.0
    v[META_LAYOUT.index(f"weighting_{series.weighting.value}")] = 1.0
    return v


def manifest_metadata(manifest: DatasetManifest) -> np.ndarray:
    return np.stack([
        extract_metadata(s, manifest.patients[s.study_id], manifest.series[s.series_id])
        for s in manifest.samples
    ]) if manifest.samples else np.zeros((0, META_DIM))
