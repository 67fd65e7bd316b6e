"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict

import numpy as np

from . import dataset, estimates, weights
from .channel import channel_to_tensor
from .config import ConfigError, RunConfig, config_from_dict, parse_config
from .dataset import Sample
from .graph import LayerGraph, build_model, forward, fuse_graph
from .ls import build_srs_cache, ls_estimate, ls_estimate_fixed_raw
from .quant import QModel, calibrate, infer_direct, quantize_model
from .refnet import nmse
from .selftest import run_all
from .stream import estimate_cycles, run_pipeline

log = logging.getLogger("swiftchannel")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else config_from_dict({})
    cfg.paths = {k: v for k, v in vars(args).items()
                 if k in ("output", "input", "model", "data", "estimates", "calib") and v}
    return cfg


def _ls_float(s: Sample) -> np.ndarray:
    obs = s.observation()
    return ls_estimate(obs, build_srs_cache(obs.srs))


def _load_float(path, kind) -> LayerGraph:
    m = weights.load(path, kind)
    if isinstance(m, QModel):
        raise UsageError(f"{path} holds a quantized model; a float model is required")
    return m


def _load_quant(path, kind) -> QModel:
    m = weights.load(path, kind)
    if not isinstance(m, QModel):
        raise UsageError(f"{path} holds a float model; run 'quantize' first")
    return m


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg: RunConfig):
    samples = [Sample.generate(cfg.scenario_for(i)) for i in range(cfg.sample_count)]
    dataset.write(args.output, samples)
    log.info("wrote %d samples to %s", len(samples), args.output)


def cmd_init_model(args, cfg: RunConfig):
    g = build_model(cfg.model_kind, seed=cfg.seed, rep=args.rep)
    weights.save_float(args.output, g)
    log.info("%s model: %d parameters", cfg.model_kind, g.n_params)


def cmd_fuse(args, cfg: RunConfig):
    g = _load_float(args.model, cfg.model_kind)
    fused = fuse_graph(g)
    weights.save_float(args.output, fused)
    log.info("fused %d -> %d parameters", g.n_params, fused.n_params)


def _calibration(args, cfg, g):
    if g.kind != "student":
        raise UsageError("quantization is only supported for the student model")
    if not g.is_fused():
        raise UsageError("model has re-parameterizable blocks; run 'fuse' first")
    samples = dataset.read(args.data)
    return calibrate(g, [_ls_float(s) for s in samples])


def cmd_calibrate(args, cfg: RunConfig):
    g = _load_float(args.model, cfg.model_kind)
    bounds = _calibration(args, cfg, g)
    doc = {k: {"scale": q.scale, "zero_point": q.zero_point} for k, q in bounds.items()}
    text = json.dumps(doc, indent=2) + "\n"
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_quantize(args, cfg: RunConfig):
    g = _load_float(args.model, cfg.model_kind)
    qm = quantize_model(g, _calibration(args, cfg, g))
    weights.save_quant(args.output, qm)
    log.info("quantized %d conv layers", len(qm.layers))


def cmd_infer(args, cfg: RunConfig):
    samples = dataset.read(args.data)
    outs = []
    if args.engine == "float":
        g = _load_float(args.model, cfg.model_kind)
        for s in samples:
            outs.append(forward(g, _ls_float(s))[0])
    else:
        qm = _load_quant(args.model, cfg.model_kind)
        for s in samples:
            obs = s.observation()
            cache = build_srs_cache(obs.srs)
            if args.engine == "direct":
                outs.append(infer_direct(ls_estimate_fixed_raw(obs, cache), qm).dequantize())
            else:
                outs.append(run_pipeline(obs, qm, cache, cfg.engine))
    estimates.write(args.output, outs)
    log.info("wrote %d estimates (%s engine)", len(outs), args.engine)


def _fmt_db(db: float) -> str:
    return "-inf" if db == -np.inf else f"{db:.6f}"


def cmd_eval(args, cfg: RunConfig):
    samples = dataset.read(args.data)
    ests = estimates.read(args.estimates)
    if len(ests) != len(samples):
        raise ValueError(f"{len(ests)} estimates for {len(samples)} samples")
    groups = defaultdict(list)
    for s, e in zip(samples, ests):
        groups[s.snr_db].append((e, channel_to_tensor(s.h_full.astype(np.complex128))))
    rows = sorted(groups.items()) + [("all", [p for _, v in sorted(groups.items()) for p in v])]
    print(f"{'snr_db':>8} {'samples':>8} {'nmse':>24} {'nmse_db':>12}")
    for snr, pairs in rows:
        lin, db = nmse(np.stack([e for e, _ in pairs]), np.stack([t for _, t in pairs]))
        label = snr if isinstance(snr, str) else f"{snr:g}"
        print(f"{label:>8} {len(pairs):>8} {lin:>24.17g} {_fmt_db(db):>12}")


def cmd_cycles(args, cfg: RunConfig):
    if args.model:
        g = weights.load(args.model, cfg.model_kind)
        g = g.graph if isinstance(g, QModel) else g
    else:
        g = build_model(cfg.model_kind)
    if not g.is_fused():
        g = fuse_graph(g)
    sc = cfg.scenario
    report = estimate_cycles(g, (sc.n_k, sc.n_r * sc.n_ue), cfg.engine)
    sys.stdout.write(report.to_json() if args.json else report.to_text())


def cmd_selftest(args, cfg: RunConfig):
    if not run_all():
        raise RuntimeError("self-test failed")


COMMANDS = {
    "synth": cmd_synth,
    "init-model": cmd_init_model,
    "fuse": cmd_fuse,
    "calibrate": cmd_calibrate,
    "quantize": cmd_quantize,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "cycles": cmd_cycles,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swiftchannel", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("-c", "--config", help="JSON run configuration (defaults if omitted)")
        return sp

    sp = cmd("synth", "write a synthetic SWDS dataset")
    sp.add_argument("-o", "--output", required=True)
    sp = cmd("init-model", "write seeded float SWCW weights")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--rep", action="store_true", help="student with re-parameterizable blocks")
    sp = cmd("fuse", "fold re-parameterizable blocks into single 3x3 convs")
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp = cmd("calibrate", "print or write activation quantizers as JSON")
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-d", "--data", required=True)
    sp.add_argument("-o", "--output")
    sp = cmd("quantize", "calibrate and write a quantized SWCW model")
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-d", "--data", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp = cmd("infer", "run an engine over a dataset and write SWCE estimates")
    sp.add_argument("-m", "--model", required=True)
    sp.add_argument("-d", "--data", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--engine", choices=("float", "direct", "stream"), default="stream")
    sp = cmd("eval", "print the NMSE table per SNR level")
    sp.add_argument("-d", "--data", required=True)
    sp.add_argument("-e", "--estimates", required=True)
    sp = cmd("cycles", "print the analytic cycle report")
    sp.add_argument("-m", "--model")
    sp.add_argument("--json", action="store_true")
    cmd("selftest", "run the oracle-equivalence checks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure of any stage
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
