"""Command-line harness: ``octosim CONFIG [--collab on|off] [--flows N] ...``.

Exit status: 0 success, 2 oracle mismatch, 3 configuration error, 1 other
simulator errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .compiler.ir import quantize_model
from .compiler.manifest import write_artifacts
from .errors import ConfigError, OctoError, OracleMismatch
from .oracle import golden_accumulate, golden_word, oracle_infer
from .report import build_metrics, summary, write_jsonl, write_summary
from .system import System, saturated
from .usecase import load_config

log = logging.getLogger("octosim")


def compare_oracle(qm, result, fprog=None, headers=None, threshold: int = 1, time_unit_ns: int = 1000) -> dict:
    """Check every traced layer boundary, every score vector and every frozen feature word."""
    names = [l.name for l in qm.layers]
    checked, first = 0, None
    for i, x in enumerate(result.inputs):
        outs = oracle_infer(qm, x)
        for layer, snaps in result.boundaries.items():
            checked += 1
            ref = outs[names.index(layer)]
            if first is None and not np.array_equal(snaps[i], ref):
                first = {"sample": i, "layer": layer}
        checked += 1
        if first is None and list(result.records[i].scores) != [int(v) for v in outs[-1].reshape(-1)]:
            first = {"sample": i, "layer": "scores"}
    if fprog is not None and headers is not None and result.frozen_words:
        golden = golden_accumulate(headers, threshold, time_unit_ns)
        for key, word in result.frozen_words:
            if key in result.dropped:
                continue  # part of this flow went to a colliding slot holder
            checked += 1
            if first is None and golden_word(golden[key], fprog.layout) != word:
                first = {"flow": key.hex(), "layer": "feature_word"}
    return {"pass": first is None, "checked": checked, "first_divergence": first}


def _onoff(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return v == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="octosim", description="Simulate an in-network DL accelerator on a use-case config.")
    p.add_argument("config", help="config file, or a preset name: usecase1, usecase2, usecase3")
    p.add_argument("--collab", type=_onoff, default=None, help="heterogeneous collaboration on|off")
    p.add_argument("--flows", type=int, default=None, help="synthetic flow count")
    p.add_argument("--seed", type=int, default=None, help="synthetic trace seed")
    p.add_argument("--oracle", type=_onoff, default=True, help="verify against the integer oracle (default on)")
    p.add_argument("--out", default="octosim-out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.flows is not None and args.flows < 1:
            raise ConfigError("--flows must be positive")
        ucfg = load_config(args.config).with_overrides(args.collab, args.flows, args.seed)
        sc = ucfg.system_config()
        sc.trace = args.oracle
        qm = quantize_model(ucfg.model_ir())
        headers = ucfg.headers()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except OctoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        sim = System(qm, sc)
        log.info("compiled %s: batch %d", qm.name, sim.program.batch)
        result = sim.run(headers)
        log.info("simulated %d packets, %d samples", len(headers), result.samples)
        oracle = None
        if args.oracle:
            ec = sc.extractor
            oracle = compare_oracle(qm, result, sim.fprog, headers, ec.threshold, ec.time_unit_ns)
        sat = saturated(sim.sched, result.samples, sc.compute_hz, sc.ctrl_overhead)
        metrics = build_metrics(ucfg.name, ucfg.digest(), sc, sim.program, result, sat, oracle)
        write_jsonl(out / "metrics.jsonl", metrics)
        write_summary(out / "summary.txt", metrics)
        sim.controller.write_records(out / "decisions.ndjson")
        sim.controller.write_events(out / "events.ndjson")
        write_artifacts(sim.program, sim.sched, out / "compiler")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except OctoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(summary(metrics))
    if oracle is not None and not oracle["pass"]:
        print(f"oracle mismatch: {OracleMismatch(oracle['first_divergence'])}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
