import numpy as np
import pytest

from spinegrade.data import ImageBuffer, write_pgm


def write_csv(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def tiny_dataset(tmp_path):
    """Three-sample manifest with matching 8x6 images."""
    images = tmp_path / "images"
    images.mkdir()
    write_csv(tmp_path / "train.csv", [
        "study_id,series_id,instance_id,condition,vertebral_level,severity",
        "1,11,1,SpinalCanalStenosis,L4L5,NormalMild",
        "2,21,3,LeftNeuralForaminalNarrowing,L5S1,Moderate",
        "3,31,2,RightSubarticularStenosis,L1L2,Severe",
    ])
    write_csv(tmp_path / "coords.csv", [
        "study_id,series_id,instance_id,x,y",
        "1,11,1,3.5,2.0",
        "2,21,3,7.0,5.0",
    ])
    write_csv(tmp_path / "series.csv", [
        "series_id,plane,weighting",
        "11,Sagittal,T2",
        "21,Axial,T1",
        "31,Sagittal,T1",
    ])
    write_csv(tmp_path / "patients.csv", [
        "study_id,age_years,sex",
        "1,50,F",
        "2,71.5,M",
        "3,40,Unknown",
    ])
    for key in ("1_11_1", "2_21_3", "3_31_2"):
        write_pgm(images / f"{key}.pgm", ImageBuffer(np.arange(48, dtype=float).reshape(6, 8)))
    return tmp_path


# acceptance verdict lines, echoed in the terminal summary so they show without -s
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
