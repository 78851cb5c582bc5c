"""Command-line entry point: ``gen``, ``solve``, ``sweep`` and ``verify``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .channel import load_scenario, save_scenario
from .config import SystemConfig, get_profile
from .experiments import SCHEMES, SweepSpec, gen_scenario, run_baseline, run_sweep
from .optimizer import PddOptions, load_solution, save_solution, write_trace
from .reconstruction import from_precoder, verify_no_sensing_beams


def _config(args) -> SystemConfig:
    cfg = get_profile(args.profile)
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
        merged = cfg.to_dict()
        merged.update(d.get("config", d))
        cfg = SystemConfig.from_dict(merged)
    return cfg


def cmd_gen(args):
    cfg = _config(args)
    sc = gen_scenario(cfg, args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"scenario_s{args.seed}.json")
    save_scenario(path, sc, cfg, include_channels=not args.no_channels)
    print(path)


def cmd_solve(args):
    if args.scenario:
        sc, cfg = load_scenario(args.scenario)
    else:
        cfg = _config(args)
        sc = gen_scenario(cfg, args.seed)
    sol = run_baseline(args.scheme, sc, cfg, PddOptions(seed=args.seed))
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"{args.scheme}_s{args.seed}")
    save_solution(stem + ".json", sol)
    write_trace(stem + "_trace.csv", sol)
    print(f"{sol.status}: max-min rate {sol.max_min_rate:.4f} bit/s/Hz, "
          f"{sol.outer_iters} outer iterations, residual {sol.residual:.2e}")
    print(stem + ".json")


def cmd_sweep(args):
    cfg = _config(args)
    with open(args.spec) as fh:
        d = json.load(fh)
    if args.trials is not None:
        d["trials"] = args.trials
    if args.seed is not None:
        d["seed"] = args.seed
    if args.scheme:
        d["schemes"] = [args.scheme]
    spec = SweepSpec.from_dict(d)
    res = run_sweep(spec, cfg, args.out)
    for r in res.rows:
        print(f"{r['scheme']:>20} {r['value']:>8} mean {r['mean_rate']:.4f} "
              f"(n={r['n_ok']}, infeasible={r['infeasible_count']}, failed={r['failed_count']})")


def cmd_verify(args):
    sc, cfg = load_scenario(args.scenario)
    sol = load_solution(args.solution)
    if sol.beamformer is None:
        F, W = np.eye(cfg.n_tx, dtype=complex), sol.precoder
        cfg = cfg.replace(n_rf=cfg.n_tx)
    else:
        F, W = sol.beamformer.analog, sol.beamformer.digital
    V = None
    if args.sense_share > 0:
        # move a share of the power into a dedicated sensing block to exercise the merge
        rng = np.random.default_rng(args.seed)
        n = W.shape[0]
        A = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
        V = A @ A.conj().T
        FhF = F.conj().T @ F
        p_w = np.real(np.trace(FhF @ W @ W.conj().T))
        V *= args.sense_share * p_w / np.real(np.trace(FhF @ V))
        W = W * np.sqrt(1 - args.sense_share)
    rep = verify_no_sensing_beams(from_precoder(F, W, V), sc, cfg)
    text = json.dumps(rep, indent=1)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verify.json"), "w") as fh:
            fh.write(text)
    print(text)
    return 0 if rep["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfisac", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--config", help="JSON file with SystemConfig fields (overrides the profile)")
        sp.add_argument("--profile", choices=("desk", "paper"), default="desk")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", default="out")

    g = sub.add_parser("gen", help="draw a scenario and write it as JSON")
    common(g)
    g.add_argument("--no-channels", action="store_true", help="store geometry only")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="optimize one scenario")
    common(s)
    s.add_argument("--scenario", help="scenario JSON (default: draw one from --seed)")
    s.add_argument("--scheme", choices=SCHEMES, default="rsma_hybrid_nf")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="Monte-Carlo sweep from a SweepSpec JSON")
    common(w, seed_default=None)
    w.add_argument("spec")
    w.add_argument("--scheme", choices=SCHEMES, help="run only this scheme")
    w.add_argument("--trials", type=int)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="sensing-beam reconstruction checks on a solution file")
    common(v)
    v.add_argument("scenario")
    v.add_argument("solution")
    v.add_argument("--sense-share", type=float, default=0.3,
                   help="power share moved into a dedicated sensing block before merging")
    v.set_defaults(func=cmd_verify, out=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
