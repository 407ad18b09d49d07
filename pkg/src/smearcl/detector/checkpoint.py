"""Versioned binary checkpoints: magic, version, JSON header, float32 parameters."""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..core import CellClass
from .estimator import CellDetector
from .pipeline import MEMBERS, DualDetectorPipeline

MAGIC = b"SMCLCKPT"
FORMAT_VERSION = 1


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if isinstance(v, CellClass):
            v = int(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def save_detector(det: CellDetector, path) -> Path:
    path = Path(path)
    theta = det.get_theta().astype("<f4")
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": det.architecture(),
        "params": _jsonable(det.get_params()),
        "seed": int(det.random_state),
        "n_params": int(theta.size),
        "best_epoch": det.best_epoch_,
        "history": list(getattr(det, "history_", None) or []),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(theta.tobytes())
    os.replace(tmp, path)
    return path


def load_detector(path) -> CellDetector:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a detector checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    theta = np.frombuffer(data, dtype="<f4", offset=off)
    if theta.size != header["n_params"]:
        raise ValueError(f"{path}: expected {header['n_params']} parameters, found {theta.size}")
    params = header["params"]
    params["target"] = CellClass(params["target"])
    params["widths"] = tuple(params["widths"])
    det = CellDetector(**params).initialize()
    det.set_theta(theta)
    det.best_epoch_ = header.get("best_epoch")
    det.history_ = header.get("history", [])
    return det


def save_pipeline(pipe: DualDetectorPipeline, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in MEMBERS:
        save_detector(pipe.member(name), directory / f"{name}.ckpt")
    return directory


def load_pipeline(directory, merge_tau: float = 0.5) -> DualDetectorPipeline:
    directory = Path(directory)
    pipe = DualDetectorPipeline(merge_tau=merge_tau)
    pipe.rbc_detector_ = load_detector(directory / "rbc.ckpt")
    pipe.infected_detector_ = load_detector(directory / "infected.ckpt")
    pipe.rbc_detector = pipe.rbc_detector_
    pipe.infected_detector = pipe.infected_detector_
    return pipe


def pipeline_complete(directory) -> bool:
    directory = Path(directory)
    return all((directory / f"{name}.ckpt").is_file() for name in MEMBERS)
