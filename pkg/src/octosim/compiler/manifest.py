"""Model files and compiler artifacts.

A model is a YAML manifest plus a raw weight blob::

    format: octosim-model/1
    name: usecase2
    input_shape: [20, 1]
    input_scale: 0.0625
    blob: usecase2.bin          # relative to the manifest
    layers:
      - {type: conv1d, name: conv1, kernel_size: 3, in_channels: 1,
         out_channels: 32, stride: 1, padding: 1, act: relu}
      - {type: maxpool1d, name: pool1, stride: 2, ceil_mode: true}
      ...
    tensors:
      - {name: conv1, shape: [3, 1, 32], offset: 0}
      ...

Every tensor is stored C-order as little-endian IEEE float64 (``<f8``)
starting at ``offset`` bytes into the blob, so weights round-trip exactly.
Layer ``type`` is one of dense, conv1d, maxpool1d, activation, attention,
flatten; the remaining keys are the constructor fields of that layer.
"""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Dict

import numpy as np
import yaml

from ..errors import ConfigError, IoError, ShapeError
from .ir import Activation, Attention, Conv1D, Dense, Flatten, MaxPool1D, ModelIR, weight_shapes

FORMAT = "octosim-model/1"
DTYPE = "<f8"
LAYER_TYPES = {"dense": Dense, "conv1d": Conv1D, "maxpool1d": MaxPool1D,
               "activation": Activation, "attention": Attention, "flatten": Flatten}
_TYPE_OF = {v: k for k, v in LAYER_TYPES.items()}


def save_model(ir: ModelIR, manifest_path, blob_name: str = None) -> Path:
    path = Path(manifest_path)
    blob_name = blob_name or path.with_suffix(".bin").name
    tensors, chunks, offset = [], [], 0
    for layer in ir.layers:
        for key, shp in weight_shapes(layer).items():
            data = np.ascontiguousarray(ir.weights[key], dtype=DTYPE).tobytes()
            tensors.append({"name": key, "shape": list(shp), "offset": offset})
            chunks.append(data)
            offset += len(data)
    doc = {
        "format": FORMAT,
        "name": ir.name,
        "input_shape": list(ir.input_shape),
        "input_scale": float(ir.input_scale),
        "blob": blob_name,
        "layers": [dict(type=_TYPE_OF[type(l)], **asdict(l)) for l in ir.layers],
        "tensors": tensors,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
        (path.parent / blob_name).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def load_model(manifest_path) -> ModelIR:
    path = Path(manifest_path)
    try:
        doc = yaml.safe_load(path.read_text())
        blob = (path.parent / doc["blob"]).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    except (KeyError, TypeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: not a model manifest ({exc})") from exc
    if doc.get("format") != FORMAT:
        raise ConfigError(f"{path}: unsupported format {doc.get('format')!r}")
    layers = []
    for entry in doc["layers"]:
        entry = dict(entry)
        cls = LAYER_TYPES.get(entry.pop("type", None))
        if cls is None:
            raise ConfigError(f"{path}: unknown layer type in {entry}")
        layers.append(cls(**entry))
    weights: Dict[str, np.ndarray] = {}
    isz = np.dtype(DTYPE).itemsize
    for t in doc["tensors"]:
        shp = tuple(t["shape"])
        n = int(np.prod(shp)) * isz
        if t["offset"] + n > len(blob):
            raise ShapeError(f"tensor {t['name']!r} runs past the end of the blob")
        weights[t["name"]] = np.frombuffer(blob, DTYPE, int(np.prod(shp)), t["offset"]).reshape(shp).astype(np.float64)
    ir = ModelIR(doc["name"], tuple(doc["input_shape"]), layers, weights, float(doc["input_scale"]))
    return ir.validate()


def write_artifacts(program, sched, out_dir) -> Dict[str, Path]:
    """Both assembly listings, the memory layout and a schedule report."""
    d = Path(out_dir)
    files = {
        "arype.s": program.arype_text(0),
        "vpe.s": program.vpe_text(),
        "layout.json": json.dumps(program.layout_manifest(), indent=1, sort_keys=True) + "\n",
        "schedule.txt": schedule_report(program, sched),
    }
    out = {}
    try:
        d.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            p = d / name
            p.write_text(text)
            out[name] = p
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return out


def schedule_report(program, sched) -> str:
    cfg = sched.cfg
    lines = [f"model {program.model}  batch {program.batch}  k {cfg.k}  "
             f"collab {'on' if cfg.collab else 'off'}  image {program.image_digest()[:16]}", ""]
    lines.append(f"{'task':<20}engine")
    for task, engine in program.placement.items():
        lines.append(f"{task:<20}{engine}")
    counts: Dict[str, int] = {}
    cycles: Dict[str, int] = {}
    for j in program.jobs[0]:
        counts[j.engine] = counts.get(j.engine, 0) + 1
        cycles[j.engine] = cycles.get(j.engine, 0) + j.cycles
    lines += ["", f"{'engine':<8}{'jobs':>8}{'cycles':>10}"]
    for e in sorted(counts):
        lines.append(f"{e:<8}{counts[e]:>8}{cycles[e]:>10}")
    lines += ["", f"aggregations {program.aggregations}", f"front/back split at job {program.split}"]
    return "\n".join(lines) + "\n"
