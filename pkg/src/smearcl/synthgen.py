"""Deterministic synthetic thin-smear sites with controllable site effects.

Layout (patients, image counts, cell geometry, which cells are infected) is
drawn from one random stream and appearance (colour jitter, artifacts, noise)
from another, so changing a visual parameter never moves an annotation.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter

from .core import Annotation, BoundingBox, CellClass, ImageRecord, SiteDataset, TaskStream, iou

# train/test counts per site: (patients, images, positive images)
TABLE1_TRAIN = [(92, 1316, 1087), (155, 775, 488), (40, 160, 70), (21, 95, 48), (22, 151, 16)]
TABLE1_TEST = [(28, 323, 237), (38, 190, 124), (10, 40, 28), (4, 26, 10), (5, 32, 6)]

MAX_CELL_IOU = 0.3

_CELL_RGB = np.array([214.0, 138.0, 150.0])
_PARASITE_RGB = np.array([78.0, 22.0, 104.0])
_PLAIN_BG = np.array([244.0, 238.0, 232.0])


@dataclass(frozen=True)
class SiteProfile:
    site_id: str
    n_patients: int
    positive_image_fraction: float
    images_per_patient: tuple[int, int] = (3, 8)
    cell_density: tuple[int, int] = (16, 28)
    parasite_per_positive: tuple[int, int] = (1, 3)
    stain_hue_shift: float = 0.0
    background_tint: tuple[int, int, int] = (255, 255, 255)
    blur_sigma: float = 0.5
    noise_std: float = 3.0
    artifact_rate: float = 0.0
    seed: int = 0
    stain_intensity: float = 1.0
    test_fraction: float = 0.2
    n_train_images: Optional[int] = None
    n_test_images: Optional[int] = None
    image_size: int = 256
    cell_radius: tuple[float, float] = (10.0, 13.0)

    def __post_init__(self):
        for name in ("positive_image_fraction", "artifact_rate", "test_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        for name in ("images_per_patient", "cell_density", "parasite_per_positive", "cell_radius"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted: {(lo, hi)}")
        if self.images_per_patient[0] < 1 or self.cell_density[0] < 1:
            raise ValueError("image and cell counts must be >= 1")
        if self.positive_image_fraction > 0 and self.parasite_per_positive[0] < 1:
            raise ValueError(
                "inconsistent profile: positive images requested but "
                "parasite_per_positive allows zero parasites"
            )
        if self.stain_intensity <= 0:
            raise ValueError("stain_intensity must be positive")


@dataclass(frozen=True)
class GenerationReport:
    site_id: str
    train_patients: int
    train_images: int
    train_positive: int
    test_patients: int
    test_images: int
    test_positive: int

    @classmethod
    def of(cls, site: SiteDataset) -> "GenerationReport":
        train = site.train + site.val
        return cls(
            site.site_id,
            len({r.patient_id for r in train}),
            len(train),
            sum(r.positive for r in train),
            len(site.patients("test")),
            len(site.test),
            sum(r.positive for r in site.test),
        )


def default_profiles(scale: float = 4.0, seed: int = 0, image_size: int = 256) -> list[SiteProfile]:
    """Five sites whose counts are the clinical table divided by ``scale``.

    Positive fractions mirror the train ratios per site. Visual parameters
    differ per site: stain hue, background, blur, noise and magnification
    (cell radius); sites 3 and 5 carry stain-blob artifacts.
    """
    looks = [
        dict(stain_hue_shift=0.0, background_tint=(255, 252, 248), blur_sigma=0.5, noise_std=3.0),
        dict(stain_hue_shift=150.0, background_tint=(236, 244, 255), cell_radius=(15.0, 18.0)),
        dict(stain_hue_shift=100.0, blur_sigma=1.0, noise_std=5.0, artifact_rate=0.5,
             cell_radius=(15.0, 18.0)),
        dict(stain_hue_shift=60.0, background_tint=(240, 255, 240), blur_sigma=1.0,
             noise_std=6.0, stain_intensity=0.8, cell_radius=(12.0, 15.0)),
        dict(stain_hue_shift=-160.0, background_tint=(250, 235, 250), blur_sigma=1.2,
             noise_std=5.0, stain_intensity=0.75, artifact_rate=0.15),
    ]
    profiles = []
    for i, ((trp, tri, trpos), (tep, tei, _)) in enumerate(zip(TABLE1_TRAIN, TABLE1_TEST)):
        n_train_p = max(3, round(trp / scale))
        n_test_p = max(1, round(tep / scale))
        n_train_i = max(n_train_p, round(tri / scale))
        n_test_i = max(n_test_p, round(tei / scale))
        profiles.append(
            SiteProfile(
                site_id=f"site{i + 1}",
                n_patients=n_train_p + n_test_p,
                positive_image_fraction=round(trpos / tri, 4),
                test_fraction=n_test_p / (n_train_p + n_test_p),
                n_train_images=n_train_i,
                n_test_images=n_test_i,
                seed=seed,
                image_size=image_size,
                **looks[i],
            )
        )
    return profiles


def directional_profiles(seed: int = 0, n_patients: int = 16, image_size: int = 256) -> list[SiteProfile]:
    """Three equally sized sites with strong shifts after the first.

    Sites 2 and 3 are imaged at higher magnification with rotated stain hue;
    site 3 adds blur, noise and stain-blob artifacts. A detector trained on
    site 1 alone mislocates and misses most cells there.
    """
    common = dict(n_patients=n_patients, positive_image_fraction=0.6, images_per_patient=(3, 5),
                  seed=seed, image_size=image_size)
    return [
        SiteProfile(site_id="s1", **common),
        SiteProfile(site_id="s2", stain_hue_shift=150.0, background_tint=(236, 244, 255),
                    cell_radius=(15.0, 18.0), **common),
        SiteProfile(site_id="s3", stain_hue_shift=100.0, blur_sigma=1.0, noise_std=5.0,
                    artifact_rate=0.5, cell_radius=(15.0, 18.0), **common),
    ]


def _site_seed(profile: SiteProfile) -> np.random.SeedSequence:
    return np.random.SeedSequence([profile.seed, zlib.crc32(profile.site_id.encode())])


def _split_counts(rng, n_patients: int, total: Optional[int], per_patient) -> list[int]:
    if total is None:
        lo, hi = per_patient
        return [int(c) for c in rng.integers(lo, hi + 1, size=n_patients)]
    if total < n_patients:
        raise ValueError(f"cannot give {n_patients} patients at least one image each from {total}")
    extra = rng.multinomial(total - n_patients, np.full(n_patients, 1.0 / n_patients))
    return [1 + int(e) for e in extra]


def _positive_flags(rng, counts: list[int], frac: float, guarantee: bool) -> list[list[bool]]:
    """Assign positive images patient by patient so infection clusters by patient."""
    n = sum(counts)
    n_pos = int(round(frac * n))
    if guarantee and frac > 0 and n > 0:
        n_pos = max(1, n_pos)
    flags = [[False] * c for c in counts]
    for p in rng.permutation(len(counts)):
        if n_pos <= 0:
            break
        k = min(n_pos, counts[p])
        flags[p][:k] = [True] * k
        n_pos -= k
    return flags


@dataclass
class _Cell:
    x: float
    y: float
    rx: float
    ry: float
    angle: float
    infected: bool = False
    inclusions: list = field(default_factory=list)

    def box(self, size: int) -> BoundingBox:
        # extent of a rotated ellipse
        c, s = math.cos(self.angle), math.sin(self.angle)
        hx = math.sqrt((self.rx * c) ** 2 + (self.ry * s) ** 2)
        hy = math.sqrt((self.rx * s) ** 2 + (self.ry * c) ** 2)
        return BoundingBox.from_corners(
            max(0.0, (self.x - hx) / size),
            max(0.0, (self.y - hy) / size),
            min(1.0, (self.x + hx) / size),
            min(1.0, (self.y + hy) / size),
        )


def _layout_image(rng, profile: SiteProfile, positive: bool) -> list[_Cell]:
    size = profile.image_size
    lo, hi = profile.cell_density
    target = int(rng.integers(lo, hi + 1))
    cells: list[_Cell] = []
    boxes: list[BoundingBox] = []
    attempts = 0
    while len(cells) < target and attempts < target * 60:
        attempts += 1
        r = rng.uniform(*profile.cell_radius)
        ecc = rng.uniform(0.85, 1.0)
        angle = rng.uniform(0, math.pi)
        margin = r + 2
        x = rng.uniform(margin, size - margin)
        y = rng.uniform(margin, size - margin)
        cell = _Cell(x, y, r, r * ecc, angle)
        b = cell.box(size)
        if any(iou(b, o) > MAX_CELL_IOU for o in boxes):
            continue
        cells.append(cell)
        boxes.append(b)
    if positive:
        lo, hi = profile.parasite_per_positive
        k = min(len(cells), int(rng.integers(lo, hi + 1)))
        for idx in rng.choice(len(cells), size=k, replace=False):
            cell = cells[int(idx)]
            cell.infected = True
            n_dots = 1 + int(rng.random() < 0.3)
            for _ in range(n_dots):
                ang = rng.uniform(0, 2 * math.pi)
                d = rng.uniform(0.0, 0.45) * cell.ry
                cell.inclusions.append(
                    (cell.x + d * math.cos(ang), cell.y + d * math.sin(ang), rng.uniform(2.3, 3.2))
                )
    return cells


def _paint_disk(canvas, x, y, r, rgb, alpha):
    size = canvas.shape[0]
    x0, x1 = max(0, int(x - r - 2)), min(size, int(x + r + 3))
    y0, y1 = max(0, int(y - r - 2)), min(size, int(y + r + 3))
    if x0 >= x1 or y0 >= y1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xx + 0.5 - x, yy + 0.5 - y)
    m = np.clip(r - d + 0.5, 0.0, 1.0)[..., None] * alpha
    patch = canvas[y0:y1, x0:x1]
    patch[:] = patch * (1 - m) + rgb * m


def _paint_cell(canvas, cell: _Cell, rgb, strength):
    size = canvas.shape[0]
    r = max(cell.rx, cell.ry)
    x0, x1 = max(0, int(cell.x - r - 2)), min(size, int(cell.x + r + 3))
    y0, y1 = max(0, int(cell.y - r - 2)), min(size, int(cell.y + r + 3))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dx, dy = xx + 0.5 - cell.x, yy + 0.5 - cell.y
    c, s = math.cos(cell.angle), math.sin(cell.angle)
    u = (dx * c + dy * s) / cell.rx
    v = (-dx * s + dy * c) / cell.ry
    rho = np.sqrt(u * u + v * v)
    edge = np.clip((1.0 - rho) * cell.ry + 0.5, 0.0, 1.0)
    # central pallor: stain concentrates towards the rim
    a = (0.55 + 0.4 * np.clip(rho, 0, 1) ** 2) * edge * strength
    a = a[..., None]
    patch = canvas[y0:y1, x0:x1]
    patch[:] = patch * (1 - a) + rgb * a


def _render(layout: list[_Cell], profile: SiteProfile, look_rng, hue_jitter: float,
            gain: float) -> np.ndarray:
    size = profile.image_size
    canvas = np.empty((size, size, 3))
    canvas[:] = _PLAIN_BG
    strength = min(1.0, profile.stain_intensity)
    for cell in layout:
        _paint_cell(canvas, cell, _CELL_RGB, strength)
    par_alpha = min(1.0, 0.92 * profile.stain_intensity)
    for cell in layout:
        for (x, y, r) in cell.inclusions:
            _paint_disk(canvas, x, y, r, _PARASITE_RGB, par_alpha)
    if look_rng.random() < profile.artifact_rate:
        for _ in range(int(look_rng.integers(1, 5))):
            if layout and look_rng.random() < 0.6:
                # precipitate sitting on a cell mimics an inclusion best
                host = layout[int(look_rng.integers(len(layout)))]
                ang = look_rng.uniform(0, 2 * math.pi)
                d = look_rng.uniform(0.0, 0.5) * host.ry
                x, y = host.x + d * math.cos(ang), host.y + d * math.sin(ang)
            else:
                x, y = look_rng.uniform(4, size - 4, size=2)
            _paint_disk(canvas, x, y, look_rng.uniform(2.3, 3.8), _PARASITE_RGB, par_alpha)

    hsv = rgb_to_hsv(np.clip(canvas, 0, 255) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + (profile.stain_hue_shift + hue_jitter) / 360.0) % 1.0
    img = hsv_to_rgb(hsv) * 255.0
    img = img * (np.asarray(profile.background_tint, dtype=float) / 255.0) * gain
    if profile.blur_sigma > 0:
        img = gaussian_filter(img, sigma=(profile.blur_sigma, profile.blur_sigma, 0))
    if profile.noise_std > 0:
        img = img + look_rng.normal(0.0, profile.noise_std, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _annotations(layout: list[_Cell], size: int) -> tuple[Annotation, ...]:
    anns = []
    for cell in layout:
        b = cell.box(size)
        anns.append(Annotation(b, CellClass.RBC_ANY))
        if cell.infected:
            anns.append(Annotation(b, CellClass.RBC_INFECTED))
    return tuple(anns)


def generate_site(profile: SiteProfile) -> tuple[SiteDataset, GenerationReport]:
    """Render one site. Same profile, same bytes."""
    layout_ss, look_ss = _site_seed(profile).spawn(2)
    rng = np.random.default_rng(layout_ss)
    look_rng = np.random.default_rng(look_ss)

    n = profile.n_patients
    n_test = int(round(profile.test_fraction * n))
    if n >= 2:
        n_test = min(max(n_test, 1 if profile.test_fraction > 0 else 0), n - 1)
    else:
        n_test = 0
    order = rng.permutation(n)
    pid = [f"{profile.site_id}_p{i:03d}" for i in range(n)]
    test_p = [pid[i] for i in sorted(order[:n_test])]
    train_p = [pid[i] for i in sorted(order[n_test:])]

    splits = {}
    for name, patients, total in (
        ("train", train_p, profile.n_train_images),
        ("test", test_p, profile.n_test_images),
    ):
        if not patients:
            splits[name] = ([], [])
            continue
        counts = _split_counts(rng, len(patients), total, profile.images_per_patient)
        flags = _positive_flags(rng, counts, profile.positive_image_fraction, guarantee=True)
        splits[name] = (patients, flags)

    # patient-level jitter is an appearance property
    jitter = {p: (look_rng.normal(0, 4.0), look_rng.normal(1.0, 0.03)) for p in pid}

    out: dict[str, list[ImageRecord]] = {"train": [], "test": []}
    counter = 0
    for name in ("train", "test"):
        patients, flags = splits[name]
        for p, pflags in zip(patients, flags):
            for positive in pflags:
                layout = _layout_image(rng, profile, positive)
                hue_j, gain = jitter[p]
                pixels = _render(layout, profile, look_rng, hue_j, gain)
                out[name].append(
                    ImageRecord(
                        image_id=f"{profile.site_id}_img{counter:05d}",
                        patient_id=p,
                        site_id=profile.site_id,
                        pixels=pixels,
                        annotations=_annotations(layout, profile.image_size),
                    )
                )
                counter += 1
    site = SiteDataset(profile.site_id, train=out["train"], test=out["test"])
    return site, GenerationReport.of(site)


def generate_stream(profiles: Sequence[SiteProfile]) -> tuple[TaskStream, list[GenerationReport]]:
    sites, reports = zip(*(generate_site(p) for p in profiles))
    return TaskStream(tuple(sites)), list(reports)


def shifted(profile: SiteProfile, **changes) -> SiteProfile:
    return replace(profile, **changes)


ROW_LABELS = (
    ("train", "# patients", "train_patients"),
    ("train", "# images", "train_images"),
    ("train", "# positive images", "train_positive"),
    ("test", "# patients", "test_patients"),
    ("test", "# images", "test_images"),
    ("test", "# positive images", "test_positive"),
)


def describe(stream: TaskStream | Sequence[SiteDataset]) -> list[list]:
    """Count table with one column per site and six count rows.

    First row is the header ``["split", "count", site ids...]``.
    """
    sites = list(stream)
    reports = [GenerationReport.of(s) for s in sites]
    table = [["split", "count"] + [r.site_id for r in reports]]
    for split, label, attr in ROW_LABELS:
        table.append([split, label] + [getattr(r, attr) for r in reports])
    return table
