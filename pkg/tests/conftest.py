import numpy as np
import pytest
from hypothesis import strategies as st

from smearcl.core import Annotation, BoundingBox, CellClass, ImageRecord, SiteDataset, TaskStream
from smearcl.detector import TrainConfig
from smearcl.strategies import StrategyConfig
from smearcl.synthgen import SiteProfile, generate_stream


def tiny_profile(site_id="a", seed=0, **kw):
    base = dict(n_patients=6, positive_image_fraction=0.6, images_per_patient=(2, 3), image_size=64,
                cell_density=(3, 5), cell_radius=(6.0, 8.0), seed=seed)
    base.update(kw)
    return SiteProfile(site_id=site_id, **base)


def tiny_stream(n_sites=2, seed=0, **kw):
    profiles = [tiny_profile(f"s{i + 1}", seed, stain_hue_shift=60.0 * i, **kw) for i in range(n_sites)]
    return generate_stream(profiles)[0]


def tiny_config(epochs=2, seed=0, **kw):
    return StrategyConfig(train=TrainConfig(epochs=epochs, patience=1, seed=seed), **kw)


def make_record(image_id, patient_id, site_id="a", infected=0, healthy=1, size=32):
    anns = []
    for k in range(infected + healthy):
        box = BoundingBox(0.1 + 0.08 * k, 0.5, 0.06, 0.06)
        anns.append(Annotation(box, CellClass.RBC_ANY))
        if k < infected:
            anns.append(Annotation(box, CellClass.RBC_INFECTED))
    return ImageRecord(image_id, patient_id, site_id, np.zeros((size, size, 3), np.uint8), tuple(anns))


def make_site(site_id, n_pos, n_neg, patients=None):
    recs = []
    for k in range(n_pos + n_neg):
        pid = f"{site_id}_p{k % patients if patients else k}"
        recs.append(make_record(f"{site_id}_{k:04d}", pid, site_id, infected=int(k < n_pos)))
    return SiteDataset(site_id, train=recs, test=())


@st.composite
def boxes(draw, lo=0.02, hi=0.5):
    w = draw(st.floats(lo, hi))
    h = draw(st.floats(lo, hi))
    cx = draw(st.floats(w / 2, 1 - w / 2))
    cy = draw(st.floats(h / 2, 1 - h / 2))
    return BoundingBox(cx, cy, w, h)


@pytest.fixture(scope="session")
def stream2():
    return tiny_stream(2)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
