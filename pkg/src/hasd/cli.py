"""Command-line entry point.

Subcommands: train, eval, downstream (train/eval), query-export,
serve-feedback, import-labels. Exit codes: 0 ok, 2 usage/config error,
3 runtime failure. Environment overrides: OUTPUT_DIR and PORT only.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import downstream as ds
from . import envs
from . import evaluation as ev
from . import preference as pref
from . import sac
from . import service
from . import trainer as tr

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hasd", description="Human-aligned skill discovery")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a skill policy")
    t.add_argument("--config", help="INI config file")
    t.add_argument("--preset", default="desk", choices=cfgmod.PRESETS)
    t.add_argument("--mode", default="hasd", choices=tr.MODES)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default=None, help="run directory")
    t.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.add_argument("--teacher", default=None,
                   help="reward-model checkpoint standing in for the ground-truth teacher")
    t.add_argument("--skip-eval", action="store_true", help="skip the post-training evaluation")
    t.add_argument("--eval-skills", type=int, default=500)

    e = sub.add_parser("eval", help="evaluate a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--alphas", default=None, help="comma list, e.g. 0,0.2,1.0")
    e.add_argument("--skills", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--allow-negative-alpha", action="store_true")

    d = sub.add_parser("downstream", help="meta-controller over frozen skills")
    dsub = d.add_subparsers(dest="downstream_command", required=True)
    dt = dsub.add_parser("train")
    dt.add_argument("--skills", required=True, help="skill checkpoint")
    dt.add_argument("--alpha", type=float, default=None,
                    help="alpha the frozen skills are interpreted at")
    dt.add_argument("--steps", type=int, default=500_000)
    dt.add_argument("--seed", type=int, default=0)
    dt.add_argument("--out", required=True)
    dt.add_argument("--hidden", default="256,256")
    dt.add_argument("--batch", type=int, default=256)
    dt.add_argument("--learning-starts", type=int, default=1000)
    dt.add_argument("--lr-critic", type=float, default=3e-3)
    dt.add_argument("--lr-actor", type=float, default=1e-3)
    dt.add_argument("--goal-radius", type=float, default=0.3)
    de = dsub.add_parser("eval")
    de.add_argument("--meta", required=True, help="meta checkpoint")
    de.add_argument("--goals", type=int, default=1000)
    de.add_argument("--seed", type=int, default=0)
    de.add_argument("--out", required=True)
    de.add_argument("--method", default="hasd")

    q = sub.add_parser("query-export", help="sample query pairs from a run's episodes")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--count", type=int, default=128)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--segment-length", type=int, default=25)
    q.add_argument("--out", required=True)

    s = sub.add_parser("serve-feedback", help="serve the labeling UI and API")
    s.add_argument("--queries", required=True)
    s.add_argument("--port", type=int, default=8400)
    s.add_argument("--out", default=None, help="label export path")
    s.add_argument("--config", default=None, help="INI config for env geometry")
    s.add_argument("--ui", default=None, help="static UI bundle directory")

    i = sub.add_parser("import-labels", help="train a reward model from human labels")
    i.add_argument("--queries", required=True)
    i.add_argument("--labels", required=True)
    i.add_argument("--out", required=True, help="reward-model checkpoint path")
    i.add_argument("--epochs", type=int, default=200)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--hidden", default="256,256")
    i.add_argument("--lr", type=float, default=3e-4)
    i.add_argument("--minibatch", type=int, default=128)
    return p


def cmd_train(args) -> int:
    overrides: dict = {}
    if args.config:
        overrides.update(cfgmod.read_config_file(args.config))
    overrides.update(cfgmod.parse_set_overrides(args.overrides))
    run_meta = {k: v for (sec, k), v in overrides.items() if sec == "run"}
    preset = run_meta.get("preset", args.preset)
    mode = run_meta.get("mode", args.mode)
    seed = int(run_meta.get("seed", args.seed))
    out = os.environ.get("OUTPUT_DIR") or args.out or run_meta.get("output_dir")
    if out is None:
        out = os.path.join("runs", f"{mode}-{preset}-seed{seed}")
    cfg = cfgmod.build_trainer_config(preset, mode, seed, overrides)
    os.makedirs(out, exist_ok=True)
    cfgmod.write_resolved_config(cfg, preset, out)
    trainer = tr.Trainer(cfg)
    if args.teacher:
        trainer.teacher = _load_model_teacher(args.teacher)
    if args.resume:
        trainer.load(args.resume)
    ckpt_path = trainer.run(out)
    print(f"checkpoint: {ckpt_path}")
    if not args.skip_eval:
        alphas = list(cfg.schedule.alpha_set) if cfg.mode == "alpha-hasd" else [cfg.schedule.c]
        points = ev.evaluate_checkpoint(
            ckpt_path, alphas, args.eval_skills, seed=cfg.seed + 10_000,
            out_dir=os.path.join(out, "eval"),
        )
        for p in points:
            print(
                f"alpha={p.alpha:g} coverage={p.coverage_raw} "
                f"alignment={p.alignment_raw:.3f} cost={p.cost:.3f}"
            )
    return EXIT_OK


def _load_model_teacher(path):
    cfg_dict, sections = ckpt.read_container(path)
    members = []
    i = 0
    while f"reward_{i}" in sections:
        members.append(sections[f"reward_{i}"])
        i += 1
    from . import autodiff as ad

    nets = [ad.load_fragment(bytes(b)) for b in members]

    class ModelTeacher:
        def label(self, pair: pref.QueryPair) -> tuple[float, float]:
            r1 = float(np.mean([pref.segment_return(n, pair.seg1) for n in nets]))
            r2 = float(np.mean([pref.segment_return(n, pair.seg2) for n in nets]))
            if abs(r1 - r2) <= 1e-9:
                return (0.5, 0.5)
            return (1.0, 0.0) if r1 > r2 else (0.0, 1.0)

    return ModelTeacher()


def cmd_eval(args) -> int:
    if args.alphas is None:
        _, cfg = tr.load_skill_policy(args.checkpoint)
        alphas = list(cfg.schedule.alpha_set) if cfg.mode == "alpha-hasd" else [cfg.schedule.c]
    else:
        try:
            alphas = [float(x) for x in args.alphas.split(",") if x.strip() != ""]
        except ValueError:
            print(f"error: malformed alpha list {args.alphas!r}", file=sys.stderr)
            return EXIT_USAGE
        if not alphas:
            print("error: empty alpha list", file=sys.stderr)
            return EXIT_USAGE
    if min(alphas) < 0 and not args.allow_negative_alpha:
        print("error: negative alpha requires --allow-negative-alpha", file=sys.stderr)
        return EXIT_USAGE
    out = os.environ.get("OUTPUT_DIR") or args.out
    points = ev.evaluate_checkpoint(args.checkpoint, alphas, args.skills, args.seed, out)
    for p in points:
        print(
            f"alpha={p.alpha:g} coverage={p.coverage_raw} "
            f"alignment={p.alignment_raw:.3f} cost={p.cost:.3f}"
        )
    return EXIT_OK


def cmd_downstream(args) -> int:
    out = os.environ.get("OUTPUT_DIR") or args.out
    os.makedirs(out, exist_ok=True)
    if args.downstream_command == "train":
        skills = ds.load_frozen_skills(args.skills, alpha=args.alpha)
        cfg = ds.MetaControllerConfig(
            skill_checkpoint=args.skills,
            alpha_interpret=skills.alpha,
            total_steps=args.steps,
            seed=args.seed,
            goal=envs.GoalTaskConfig(
                nav=skills.skill_cfg.env, goal_radius=args.goal_radius,
                max_steps=skills.skill_cfg.env.max_steps,
            ),
            sac=sac.SacConfig(
                lr_critic=args.lr_critic,
                lr_actor=args.lr_actor,
                update_to_data=1,
                hidden=tuple(int(x) for x in args.hidden.split(",")),
                batch_size=args.batch,
                learning_starts=args.learning_starts,
                replay_capacity=max(args.steps, args.batch),
            ),
        )
        ds.train_meta(cfg, skills, out_dir=out)
        print(f"meta checkpoint: {os.path.join(out, 'meta_checkpoint.bin')}")
        return EXIT_OK
    meta_policy, skills, cfg = ds.load_meta(args.meta)
    rate, mean_cost = ds.eval_meta(meta_policy, skills, cfg.goal, args.goals, args.seed)
    ds.write_results_csv(
        os.path.join(out, "downstream_results.csv"),
        [{"method": args.method, "score": rate, "cost": mean_cost, "seed": args.seed}],
    )
    print(f"goal_rate={rate:.1f}% mean_cost={mean_cost:.3f}")
    return EXIT_OK


def cmd_query_export(args) -> int:
    cfg_dict, sections = ckpt.read_container(args.checkpoint)
    store = pref.EpisodeStore()
    tr._unpack_store(sections, store)
    if len(store) == 0:
        print("error: checkpoint holds no stored episodes", file=sys.stderr)
        return EXIT_RUNTIME
    pairs = pref.sample_queries(
        store, args.segment_length, args.count, np.random.default_rng(args.seed)
    )
    n = pref.export_queries(pairs, args.out)
    print(f"exported {n} queries to {args.out}")
    return EXIT_OK


def cmd_serve_feedback(args) -> int:
    port = int(os.environ.get("PORT", args.port))
    env_cfg = envs.Nav2dConfig()
    if args.config:
        overrides = cfgmod.read_config_file(args.config)
        cfg = cfgmod.build_trainer_config(
            overrides.get(("run", "preset"), "desk"),
            overrides.get(("run", "mode"), "hasd"),
            int(overrides.get(("run", "seed"), 0)),
            overrides,
        )
        env_cfg = cfg.env
    ui_dir = args.ui
    if ui_dir is None:
        bundled = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(__file__))),
                               "frontend", "dist")
        ui_dir = bundled if os.path.isdir(bundled) else None
    server = service.serve_feedback(args.queries, port, args.out, env_cfg, ui_dir)
    print(f"serving feedback on http://127.0.0.1:{port} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_import_labels(args) -> int:
    queries = pref.load_queries(args.queries)
    buffer = pref.PreferenceBuffer()
    count = pref.import_human_labels(buffer, queries, args.labels)
    if count == 0:
        print("no labeled pairs to train on", file=sys.stderr)
        return EXIT_RUNTIME
    obs_dim = queries[0].seg1.states.shape[-1]
    act_dim = queries[0].seg1.actions.shape[-1]
    rcfg = pref.RewardConfig(
        hidden=tuple(int(x) for x in args.hidden.split(",")),
        lr=args.lr,
        minibatch=args.minibatch,
    )
    ens = pref.RewardEnsemble(obs_dim, act_dim, rcfg, np.random.default_rng(args.seed))
    acc = pref.train_reward(ens, buffer, args.epochs, np.random.default_rng(args.seed + 1))
    from . import autodiff as ad

    sections = {f"reward_{i}": ad.save_fragment(m) for i, m in enumerate(ens.members)}
    ckpt.write_container(args.out, {"kind": "reward_model", "seed": args.seed}, sections)
    print(f"imported {count} labels; held-out accuracy {acc:.3f}; model at {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "downstream":
            return cmd_downstream(args)
        if args.command == "query-export":
            return cmd_query_export(args)
        if args.command == "serve-feedback":
            return cmd_serve_feedback(args)
        if args.command == "import-labels":
            return cmd_import_labels(args)
        parser.error(f"unknown command {args.command}")
    except (cfgmod.ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # runtime failures carry exit code 3
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
