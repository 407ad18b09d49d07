"""Datasets on disk.

Layout under the dataset root::

    stream.json                       site order (+ generator profiles, if any)
    generation_report.csv             count table
    site_<id>/patients.csv            image_id, patient_id, split
    site_<id>/images/<image_id>.png
    site_<id>/labels/<image_id>.txt   one "class cx cy w h" line per box

Label classes are 0 (any RBC) and 1 (infected RBC); coordinates are
normalized to the image size and written with 6 decimals.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ..core import Annotation, BoundingBox, CellClass, ImageRecord, SiteDataset, TaskStream
from ..synthgen import SiteProfile, describe

STREAM_FILE = "stream.json"
SPLITS = ("train", "val", "test")


def site_dir(root, site_id: str) -> Path:
    return Path(root) / f"site_{site_id}"


def format_label(ann: Annotation) -> str:
    b = ann.box
    return f"{int(ann.cls)} {b.cx:.6f} {b.cy:.6f} {b.w:.6f} {b.h:.6f}"


def parse_label_line(line: str, where: str = "") -> Annotation:
    parts = line.split()
    if len(parts) != 5:
        raise ValueError(f"{where}: expected 5 fields 'class cx cy w h', got {len(parts)}")
    try:
        cls = CellClass(int(parts[0]))
        cx, cy, w, h = (float(p) for p in parts[1:])
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None
    return Annotation(BoundingBox(cx, cy, w, h), cls)


def read_labels(path) -> tuple[Annotation, ...]:
    path = Path(path)
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if line.strip():
            out.append(parse_label_line(line, f"{path}:{n}"))
    return tuple(out)


def write_site(site: SiteDataset, root) -> Path:
    d = site_dir(root, site.site_id)
    (d / "images").mkdir(parents=True, exist_ok=True)
    (d / "labels").mkdir(parents=True, exist_ok=True)
    rows = []
    for split in SPLITS:
        for rec in getattr(site, split):
            Image.fromarray(rec.pixels).save(d / "images" / f"{rec.image_id}.png")
            text = "".join(format_label(a) + "\n" for a in rec.annotations)
            (d / "labels" / f"{rec.image_id}.txt").write_text(text)
            rows.append((rec.image_id, rec.patient_id, split))
    with open(d / "patients.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "patient_id", "split"])
        w.writerows(sorted(rows))
    return d


def write_dataset(stream: TaskStream, root, profiles: Optional[Sequence[SiteProfile]] = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for site in stream:
        write_site(site, root)
    manifest = {
        "format": 1,
        "sites": [s.site_id for s in stream],
        "profiles": [asdict(p) for p in profiles] if profiles is not None else None,
    }
    (root / STREAM_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(root / "generation_report.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(describe(stream))
    return root


def _site_ids(root: Path) -> list[str]:
    manifest = root / STREAM_FILE
    if manifest.is_file():
        return list(json.loads(manifest.read_text())["sites"])
    ids = sorted(p.name[len("site_"):] for p in root.glob("site_*") if p.is_dir())
    if not ids:
        raise FileNotFoundError(f"{root}: no {STREAM_FILE} and no site_<id> directories")
    return ids


def read_site(root, site_id: str) -> SiteDataset:
    d = site_dir(root, site_id)
    index = d / "patients.csv"
    if not index.is_file():
        raise FileNotFoundError(f"{index} is missing")
    parts: dict[str, list[ImageRecord]] = {s: [] for s in SPLITS}
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            split = row.get("split") or "train"
            if split not in parts:
                raise ValueError(f"{index}: unknown split {split!r} for {row['image_id']}")
            img_path = d / "images" / f"{row['image_id']}.png"
            with Image.open(img_path) as im:
                pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
            parts[split].append(
                ImageRecord(
                    image_id=row["image_id"],
                    patient_id=row["patient_id"],
                    site_id=site_id,
                    pixels=pixels,
                    annotations=read_labels(d / "labels" / f"{row['image_id']}.txt"),
                    path=str(img_path),
                )
            )
    return SiteDataset(site_id, train=parts["train"], test=parts["test"], val=parts["val"])


def read_dataset(root) -> TaskStream:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    return TaskStream(tuple(read_site(root, sid) for sid in _site_ids(root)))


def read_profiles(root) -> Optional[list[dict]]:
    manifest = Path(root) / STREAM_FILE
    if not manifest.is_file():
        return None
    return json.loads(manifest.read_text()).get("profiles")


def directory_digest(root) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()
