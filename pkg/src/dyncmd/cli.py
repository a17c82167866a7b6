"""Command-line entry point: ``dyncmd <subcommand>``.

Exit codes: 0 success, 1 check failure, 2 usage or config error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path


from . import evalx, gradsuite, motion, trainer
from . import numkernel as nk
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .physim import RobotModel, SimError

log = logging.getLogger("dyncmd")

VARIANTS = ("full", "cnn_hist", "selfattn_cmd", "no_recovery")
GROUND_KINDS = ("crawl", "getup")


class UsageError(Exception):
    pass


def _levels(text: str | None) -> list[float]:
    if text is None:
        return [float(v) for v in evalx.DEFAULT_LEVELS]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise UsageError(f"bad --levels: {text}") from e


def _kinds(text: str | None, default) -> list[str]:
    kinds = list(default) if text is None else [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in motion.CLIP_KINDS]
    if bad:
        raise UsageError(f"unknown clip kind(s) {bad}; choose from {', '.join(motion.CLIP_KINDS)}")
    return kinds


def _config(path: str | None) -> RunConfig:
    return RunConfig() if path is None else load_config(path)


def _checkpoint(path: str):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    params, meta = trainer.load_policy(path)
    return params, config_from_dict(meta["config"]), meta


def _eval_clips(cfg: RunConfig, kinds: list[str]) -> list[motion.MotionClip]:
    return [motion.generate_clip(k, cfg.robot, cfg.motions.duration, cfg.eval.seed) for k in kinds]


def variant_config(base: RunConfig, variant: str, seed: int) -> RunConfig:
    """Copy of ``base`` for one ablation variant and training seed."""
    d = base.to_dict()
    d["seed"] = seed
    if variant == "cnn_hist":
        d["net"]["hist_variant"] = "cnn"
    elif variant == "selfattn_cmd":
        d["net"]["cmd_variant"] = "self_attention"
    elif variant == "no_recovery":
        d["task"]["curriculum"]["recovery_prob"] = 0.0
    elif variant != "full":
        raise UsageError(f"unknown variant {variant!r}")
    return config_from_dict(d)


# subcommands ---------------------------------------------------------------------------------

def cmd_gen_motions(args) -> int:
    kinds = _kinds(args.kinds, motion.CLIP_KINDS)
    model = RobotModel()
    clips = [motion.generate_clip(k, model, args.duration, args.seed) for k in kinds]
    try:
        out = motion.write_library(args.out, clips)
    except OSError as e:
        raise UsageError(f"cannot write library to {args.out}: {e}") from e
    print(f"wrote {len(clips)} clips to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args.config)
    run_dir = args.run_dir or cfg.run_dir
    t0 = time.time()

    def progress(row):
        log.info("iter %d  track_ep %.2f  len %.1f  kl %.4f", row["iteration"], row["track_episode"],
                 row["episode_len"], row["approx_kl"])

    trainer.train(cfg, run_dir, resume=args.resume, iterations=args.iterations, log=progress)
    print(f"run complete: {run_dir} ({time.time() - t0:.0f} s)")
    return 0


def cmd_eval(args) -> int:
    params, cfg, _ = _checkpoint(args.checkpoint)
    kinds = _kinds(args.clips, cfg.eval.kinds)
    clips = _eval_clips(cfg, kinds)
    rep = evalx.evaluate(params, cfg, clips, args.episodes, args.seed, args.noise_level)
    text = rep.to_csv()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args.config)
    shapes = [("config", cfg.net)]
    if not args.skip_wide:
        shapes.append(("wide", gradsuite.wide_shapes(cfg.net)))
    ok = True
    worst = None
    for label, net in shapes:
        reports = gradsuite.component_checks(net, seed=args.seed, samples_per_param=args.samples)
        for name, rep in reports.items():
            status = "PASS" if rep.passed else "FAIL"
            print(f"[{status}] {label}/{name}: max rel err {rep.max_rel_error:.3e} at {rep.worst_param}")
            if not rep.passed:
                ok = False
                if worst is None or rep.max_rel_error > worst[1]:
                    worst = (f"{label}/{name}:{rep.worst_param}", rep.max_rel_error)
    if not ok:
        print(f"gradient check failed; worst offender {worst[0]} (rel err {worst[1]:.3e})")
        return 1
    print("all gradient checks passed")
    return 0


def _policy_sets(specs: list[str]):
    """``VARIANT:PATH`` pairs grouped by variant, seeds read from the checkpoint."""
    out: dict[str, list] = {}
    cfg = None
    for spec in specs:
        if ":" not in spec:
            raise UsageError(f"expected VARIANT:PATH, got {spec!r}")
        name, path = spec.split(":", 1)
        params, rcfg, _ = _checkpoint(path)
        out.setdefault(name, []).append((rcfg.seed, params))
        cfg = cfg or rcfg
    if not out:
        raise UsageError("no checkpoints given")
    return out, cfg


def cmd_sweep(args) -> int:
    policies, ckcfg = _policy_sets(args.checkpoint)
    cfg = _config(args.config) if args.config else ckcfg
    clips = _eval_clips(cfg, _kinds(args.clips, cfg.eval.kinds))
    sweep = evalx.SweepConfig(levels=_levels(args.levels), episodes=args.episodes or cfg.eval.episodes,
                              eval_seed=cfg.eval.seed)
    rows = evalx.run_noise_sweep(policies, cfg, clips, sweep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalx.write_rows(out / "noise_sweep.csv", evalx.SWEEP_FIELDS, rows)
    print(f"wrote {len(rows)} rows to {out / 'noise_sweep.csv'}")
    return 0


def cmd_ablate(args) -> int:
    policies, ckcfg = _policy_sets(args.checkpoint)
    cfg = _config(args.config) if args.config else ckcfg
    suites = {"tracking": _eval_clips(cfg, _kinds(args.tracking, cfg.eval.kinds)),
              "ground_interaction": _eval_clips(cfg, _kinds(args.ground, GROUND_KINDS))}
    rows, notes = evalx.run_ablation_table(policies, suites, cfg, episodes=args.episodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evalx.write_rows(out / "ablation_table.csv", evalx.ABLATION_FIELDS, rows)
    for n in notes:
        print(f"warning: {n}")
    print(f"wrote {len(rows)} rows to {out / 'ablation_table.csv'}")
    return 0


def run_study(base: RunConfig, out_dir, seeds, iterations: int, levels, episodes: int, variants=VARIANTS) -> dict:
    """Train every (variant, seed) not already trained, then sweep and tabulate."""
    out = Path(out_dir)
    runs: dict[str, list] = {}
    budgets = {}
    for variant in variants:
        for seed in seeds:
            cfg = variant_config(base, variant, seed)
            run = out / "runs" / f"{variant}_s{seed}"
            ck = run / "checkpoints" / "latest.ckpt"
            done = 0
            if ck.exists():
                done = trainer.load_policy(ck)[1]["iteration"]
            if done < iterations:
                log.info("training %s seed %d (%d/%d)", variant, seed, done, iterations)
                trainer.train(cfg, run, resume=ck.exists(), iterations=iterations)
            params, meta = trainer.load_policy(ck)
            runs.setdefault(variant, []).append((seed, params))
            budgets[variant] = meta["iteration"]
    evcfg = variant_config(base, "full", seeds[0])
    track = _eval_clips(evcfg, evcfg.eval.kinds)
    ground = _eval_clips(evcfg, GROUND_KINDS)
    sweep_pols = {v: runs[v] for v in ("full", "cnn_hist", "selfattn_cmd") if v in runs}
    sweep = evalx.SweepConfig(levels=list(levels), episodes=episodes, eval_seed=evcfg.eval.seed)
    rows = evalx.run_noise_sweep(sweep_pols, evcfg, track, sweep)
    evalx.write_rows(out / "noise_sweep.csv", evalx.SWEEP_FIELDS, rows)
    table, notes = evalx.run_ablation_table(runs, {"tracking": track, "ground_interaction": ground}, evcfg,
                                            budgets, episodes=episodes)
    evalx.write_rows(out / "ablation_table.csv", evalx.ABLATION_FIELDS, table)
    return {"sweep": rows, "ablation": table, "notes": notes, "budgets": budgets}


def cmd_study(args) -> int:
    cfg = _config(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    res = run_study(cfg, args.out, seeds, args.iterations, _levels(args.levels), args.episodes)
    print(json.dumps({"budgets": res["budgets"], "notes": res["notes"]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyncmd", description=__doc__.splitlines()[0])
    p.add_argument("--deterministic", action="store_true",
                   help="sequential execution everywhere (the only mode this build implements)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-motions", help="write a procedural clip library")
    g.add_argument("--out", required=True)
    g.add_argument("--kinds", help=f"comma list from {','.join(motion.CLIP_KINDS)}")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", type=float, default=10.0)
    g.set_defaults(func=cmd_gen_motions)

    t = sub.add_parser("train", help="PPO training run")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--run-dir")
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--clips", help="comma list of clip kinds (default: config eval kinds)")
    e.add_argument("--noise-level", type=float, default=0.0)
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of all network components")
    c.add_argument("--config")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--samples", type=int, default=6, help="entries probed per tensor")
    c.add_argument("--skip-wide", action="store_true", help="skip the n_embd=128 shapes")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("sweep", help="command-noise robustness sweep")
    s.add_argument("--checkpoint", action="append", default=[], help="VARIANT:PATH, repeatable")
    s.add_argument("--config")
    s.add_argument("--levels", help="comma list of percentages (default 0..1500 step 100)")
    s.add_argument("--clips")
    s.add_argument("--episodes", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("ablate", help="ablation table over tracking and ground-interaction suites")
    a.add_argument("--checkpoint", action="append", default=[], help="POLICY:PATH, repeatable")
    a.add_argument("--config")
    a.add_argument("--tracking")
    a.add_argument("--ground")
    a.add_argument("--episodes", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    st = sub.add_parser("study", help="train all variants x seeds, then sweep and tabulate")
    st.add_argument("--config")
    st.add_argument("--out", required=True)
    st.add_argument("--seeds", default="0,1,2")
    st.add_argument("--iterations", type=int, default=300)
    st.add_argument("--levels", default="0,100,200,400,800,1500")
    st.add_argument("--episodes", type=int, default=10)
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DYNCMD_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except trainer.TrainingAbort as e:
        where = f" (minibatch dumped to {e.dump})" if e.dump else ""
        print(f"numerical abort: {e}{where}", file=sys.stderr)
        return 3
    except (nk.NonFiniteError, SimError, FloatingPointError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
