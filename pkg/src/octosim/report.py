"""Metrics assembly and rendering.

Every rate is computed here from counts, clocks and cycle totals; nothing
stores a rate of its own. Output is deterministic: no wall-clock values and
sorted keys, so repeated runs of one config produce identical bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import IoError


def _r(x: float, nd: int = 6) -> float:
    return round(float(x), nd)


def build_metrics(name: str, config_hash: str, cfg, program, result, sat, oracle: Optional[dict]) -> Dict[str, dict]:
    """Group the run's counters into sections, one JSON line each."""
    ex_hz, cp_hz = cfg.extractor_hz, cfg.compute_hz
    es = result.extractor_stats
    tl = result.timeline
    k = cfg.compile.k
    packet = cfg.extractor.granularity == "packet"
    lat = np.asarray(result.latency_ns, dtype=np.float64)
    e2e = np.asarray(result.e2e_ns, dtype=np.float64)
    span_ns = result.makespan_cycles * 1e9 / cp_hz
    busy = dict(sorted(tl.busy.items()))
    out = {
        "run": {"name": name, "config_hash": config_hash, "model": program.model,
                "granularity": cfg.extractor.granularity, "collab": cfg.compile.collab, "k": k,
                "batch": program.batch, "extractor_hz": ex_hz, "compute_hz": cp_hz,
                "image_digest": program.image_digest()},
        "extractor": {"packets": es["packets"], "cycles": result.extractor_cycles,
                      "mpps": _r(es["packets"] * ex_hz / result.extractor_cycles / 1e6) if es["packets"] else 0.0,
                      "collisions": es["collisions"], "occupancy_peak": es["occupancy_peak"],
                      "ready": es["ready"], "recycled": es["recycled"],
                      "residual_occupancy": es["occupancy"]},
        "vpe": {"busy_cycles": busy.get("seq", 0), "vu_tile_cycles": busy.get("vu", 0),
                "instructions": dict(sorted(result.vpe_stats.items()))},
        "arype": {"busy_cycles": busy.get("arype", 0), "instructions": dict(sorted(result.arype_counts.items())),
                  "macs": tl.macs, "utilization": _r(tl.arype_utilization(k))},
        "end_to_end": {
            "samples": result.samples, "batches": result.batches,
            "compute_makespan_cycles": result.makespan_cycles,
            "latency_ns_mean": _r(lat.mean(), 3) if lat.size else 0.0,
            "latency_ns_p50": _r(np.percentile(lat, 50), 3) if lat.size else 0.0,
            "latency_ns_max": _r(lat.max(), 3) if lat.size else 0.0,
            "e2e_ns_mean": _r(e2e.mean(), 3) if e2e.size else 0.0,
            "trace_rate_per_s": _r(result.samples * 1e9 / span_ns, 3) if span_ns else 0.0,
            "unit": "packets" if packet else "flows",
        },
        "saturated": {"samples": sat.samples, "makespan_cycles": sat.makespan_cycles,
                      "throughput_per_s": _r(sat.samples * cp_hz / sat.makespan_cycles, 3)
                      if sat.makespan_cycles else 0.0,
                      "arype_utilization": _r(sat.arype_utilization),
                      "busy_cycles": dict(sorted(sat.busy.items()))},
    }
    if oracle is not None:
        out["oracle"] = oracle
    return out


def write_jsonl(path, metrics: Dict[str, dict]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for section, body in metrics.items():
                fh.write(json.dumps({"section": section, **body}, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path


def read_jsonl(path) -> Dict[str, dict]:
    out = {}
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        out[d.pop("section")] = d
    return out


def _table(headers: List[str], rows: List[List[str]]) -> List[str]:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    line = lambda cells: "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"
    sep = "|-" + "-|-".join("-" * w for w in widths) + "-|"
    return [line(headers), sep] + [line(r) for r in rows]


def summary(metrics: Dict[str, dict]) -> str:
    """Plain-text tables: architecture/delay/scale, then method/efficiency/throughput."""
    run, ex, e2e, sat = metrics["run"], metrics["extractor"], metrics["end_to_end"], metrics["saturated"]
    lines = [f"# {run['name']}  ({run['model']}, {run['granularity']} granularity)",
             f"config hash {run['config_hash']}", ""]
    if run["granularity"] == "packet":
        lines += _table(["architecture", "clock", "delay (ns)", "scale"], [
            ["extractor", f"{run['extractor_hz'] / 1e6:g} MHz", "-", f"{ex['mpps']:.2f} Mpkt/s"],
            ["VPE + AryPE", f"{run['compute_hz'] / 1e6:g} MHz", f"{e2e['latency_ns_mean']:.1f}",
             f"k={run['k']}"],
        ])
    else:
        mode = "w/ collaborating" if run["collab"] else "w/o collaborating"
        lines += _table(["method", "AryPE efficiency", "throughput (flow/s)", "batch"], [
            [mode, f"{100 * sat['arype_utilization']:.1f}%", f"{sat['throughput_per_s']:.0f}", str(run["batch"])],
        ])
    lines += ["", f"packets {ex['packets']}  collisions {ex['collisions']}  occupancy peak {ex['occupancy_peak']}"
                  f"  extractor {ex['mpps']:.2f} Mpkt/s",
              f"{e2e['unit']} {e2e['samples']}  mean latency {e2e['latency_ns_mean']:.1f} ns"
              f"  trace rate {e2e['trace_rate_per_s']:.0f}/s"]
    if "oracle" in metrics:
        o = metrics["oracle"]
        lines.append(f"oracle {'PASS' if o['pass'] else 'FAIL'}  checked {o['checked']}"
                     + ("" if o["pass"] else f"  first divergence {o['first_divergence']}"))
    return "\n".join(lines) + "\n"


def write_summary(path, metrics: Dict[str, dict]) -> Path:
    path = Path(path)
    try:
        path.write_text(summary(metrics))
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path
