"""Command-line front end.

Subcommands mirror the pipeline stages:

    pretrain   run-config JSON -> pretrained-parameters artifact
    fim        run-config + params artifact -> Fisher artifact (+ stats JSON)
    finetune   run-config + artifacts -> one trial result JSON
    sweep      run-config + sweep JSON + artifacts -> results CSV + selection JSON
    pareto     results CSV -> Pareto front CSV (both modes, sorted by x)
    fim-stats  Fisher artifact -> per-layer stats JSON

Every failure exits nonzero after printing a one-line machine-readable JSON
error object to stderr. All outputs are deterministic byte-for-byte given the
same inputs.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import artifact, harness
from .evaluate import ParetoPoint, pareto_front
from .fim import fim_stats
from .nn import ModelState


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_config(path) -> harness.RunConfig:
    return harness.run_config_from_dict(_load_json(path))


def _load_artifacts(config: harness.RunConfig, params_path, fim_path) -> harness.Artifacts:
    theta = artifact.load_params(params_path)
    fisher = artifact.load_fim(fim_path)
    return harness.Artifacts(theta_ssl=theta, fisher=fisher)


def _cmd_pretrain(args) -> int:
    config = _load_config(args.config)
    tasks = harness.build_tasks(config.task)
    arts = harness.prepare_artifacts(config, tasks)
    artifact.save_params(arts.theta_ssl, args.out)
    if args.fim_out:
        artifact.save_fim(arts.fisher, args.fim_out)
    print(f"wrote {args.out}")
    return 0


def _cmd_fim(args) -> int:
    config = _load_config(args.config)
    tasks = harness.build_tasks(config.task)
    theta = artifact.load_params(args.params)
    model = ModelState(config.pretrain_spec(), theta)
    fisher = harness.compute_fisher(model, tasks.pretrain_train, config.fim)
    artifact.save_fim(fisher, args.out)
    if args.stats:
        _dump_json(fim_stats(fisher).to_dict(), args.stats)
    print(f"wrote {args.out}")
    return 0


def _trial_json(config: harness.RunConfig, result: harness.TrialResult) -> dict:
    pen = config.penalty
    return {
        "config_id": result.config_id,
        "seed": result.seed,
        "penalty_kind": pen.kind,
        "lambda": pen.lam if pen.kind != "erm" else None,
        "alpha": pen.alpha if pen.kind == "adjusted_fim" else None,
        "val_top1": result.val_top1,
        "test_top1": result.test_top1,
        "test_wga": result.test_wga,
        "reverse_top1": result.reverse_top1,
        "wall_clock_s": result.wall_clock_s,
    }


def _cmd_finetune(args) -> int:
    config = _load_config(args.config)
    arts = _load_artifacts(config, args.params, args.fim)
    result = harness.run_trial(config, arts)
    _dump_json(_trial_json(config, result), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    spec = harness.sweep_spec_from_dict(_load_json(args.sweep))
    arts = _load_artifacts(config, args.params, args.fim)
    sweep = harness.random_sweep(spec, config, arts)
    harness.write_results_csv(sweep, args.out_csv)
    _dump_json(harness.selection_summary(sweep), args.out_selection)
    print(f"wrote {args.out_csv} and {args.out_selection}")
    return 0


def _read_results_csv(path) -> list[dict]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(dict(zip(header, parts)))
    return rows


def _cmd_pareto(args) -> int:
    rows = _read_results_csv(args.in_csv)
    points = [
        ParetoPoint(
            x=float(r["test_top1"]),
            y=float(r["reverse_top1"]),
            config_id=int(r["config_id"]),
            seed=int(r["seed"]),
        )
        for r in rows
    ]
    with open(args.out_csv, "w", newline="") as fh:
        fh.write("mode,config_id,seed,test_top1,reverse_top1\n")
        for mode in ("nondominated", "convex_hull"):
            for p in pareto_front(points, mode):
                fh.write(f"{mode},{p.config_id},{p.seed},{p.x!r},{p.y!r}\n")
    print(f"wrote {args.out_csv}")
    return 0


def _cmd_fim_stats(args) -> int:
    fisher = artifact.load_fim(args.artifact)
    _dump_json(fim_stats(fisher).to_dict(), args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fimreg",
        description="Fisher-regularized fine-tuning lab: pretrain, Fisher, fine-tune, sweep.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain and save the reference parameters")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fim-out", default=None, help="also save the Fisher artifact")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("fim", help="compute the Fisher at saved parameters")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="also write per-layer stats JSON")
    p.set_defaults(func=_cmd_fim)

    p = sub.add_parser("finetune", help="run one fine-tuning trial")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--fim", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("sweep", help="random hyperparameter sweep with replicates")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--fim", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-selection", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("pareto", help="Pareto fronts from a results CSV")
    p.add_argument("--in-csv", required=True)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=_cmd_pareto)

    p = sub.add_parser("fim-stats", help="per-layer stats of a Fisher artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fim_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        err = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
