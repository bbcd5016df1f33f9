"""Command line: ``qsac train | summarize | plot-data | serve-env-mock``.

``train`` flags mirror :class:`~qsac.harness.TrainConfig`. With ``--config FILE``
the file supplies the base values and any flag given explicitly wins over it.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import envs, harness
from .errors import QSACError

# flag -> (section, field, type); section None means a top-level TrainConfig field
_TRAIN_FLAGS = {
    "algo": (None, "algo", str),
    "env": (None, "env", str),
    "seed": (None, "seed", int),
    "total_steps": (None, "total_steps", int),
    "eval_every": (None, "eval_every", int),
    "eval_episodes": (None, "eval_episodes", int),
    "out": (None, "output_dir", str),
    "gamma": ("sac", "gamma", float),
    "tau": ("sac", "tau", float),
    "alpha": ("sac", "alpha", float),
    "target_entropy": ("sac", "target_entropy", float),
    "batch_size": ("sac", "batch_size", int),
    "lr_actor": ("sac", "lr_actor", float),
    "lr_critic": ("sac", "lr_critic", float),
    "lr_alpha": ("sac", "lr_alpha", float),
    "start_steps": ("sac", "start_steps", int),
    "update_every": ("sac", "update_every", int),
    "capacity": ("sac", "capacity", int),
    "critic_hidden": ("sac", "critic_hidden", "ints"),
    "n_layers": ("policy", "n_layers", int),
    "n_qubits": ("policy", "n_qubits", int),
    "policy_hidden": ("policy", "hidden", "ints"),
    "log_std_bounds": ("policy", "log_std_bounds", "floats"),
}


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x)


def _add_train(sub):
    p = sub.add_parser("train", help="train one agent and write a run directory")
    p.add_argument("--config", help="JSON config file; explicit flags override its values")
    kinds = {"ints": _ints, "floats": _floats}
    for flag, (_, _, kind) in _TRAIN_FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, default=argparse.SUPPRESS,
                       type=kinds.get(kind, kind))
    p.add_argument("--input-scaling", dest="use_input_scaling", action="store_true", default=argparse.SUPPRESS)
    p.add_argument("--fixed-alpha", dest="auto_alpha", action="store_false", default=argparse.SUPPRESS,
                   help="keep alpha fixed at --alpha instead of auto-tuning it")
    p.add_argument("-q", "--quiet", action="store_true")


def train_config_from_args(args) -> harness.TrainConfig:
    doc = harness.TrainConfig.load(args.config).to_dict() if args.config else harness.TrainConfig().to_dict()
    given = vars(args)
    for flag, (section, name, _) in _TRAIN_FLAGS.items():
        if flag in given:
            (doc if section is None else doc[section])[name] = given[flag]
    if "use_input_scaling" in given:
        doc["policy"]["use_input_scaling"] = True
    if "auto_alpha" in given:
        doc["sac"]["auto_alpha"] = False
    return harness.TrainConfig.from_dict(doc)


def cmd_train(args) -> int:
    if not args.quiet:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = train_config_from_args(args)
    out = harness.run_training(config)
    print(out)
    return 0


def cmd_summarize(args) -> int:
    summary = harness.summarize(args.runs)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    if args.format == "json":
        print(json.dumps(summary, indent=2))
    else:
        sys.stdout.write(harness.format_table(summary))
    return 0 if summary["ok"] else 1


def cmd_plot_data(args) -> int:
    result = harness.emit_plot_data(args.runs, args.out)
    for path in result["files"]:
        print(path)
    for err in result["errors"]:
        print(f"error: {err['run']}: {err['error']}", file=sys.stderr)
    return 0 if not result["errors"] else 1


def mock_env_factory(args):
    if args.env == "scripted":
        return lambda: envs.ScriptedEnv(args.obs_dim, args.act_dim, args.episode_length)
    if args.env in envs.BUILTIN_ENVS:
        return envs.BUILTIN_ENVS[args.env]
    raise QSACError(f"unknown mock environment {args.env!r}")


def cmd_serve_env_mock(args) -> int:
    server = envs.MockEnvServer(mock_env_factory(args), args.host, args.port)
    print(f"listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsac", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)

    s = sub.add_parser("summarize", help="per-run summary table from metrics.csv")
    s.add_argument("runs", nargs="+")
    s.add_argument("--format", choices=("table", "json"), default="table")
    s.add_argument("--json", help="also write the structured summary to this file")

    d = sub.add_parser("plot-data", help="long-format CSVs for return, average return and SPS plots")
    d.add_argument("runs", nargs="+")
    d.add_argument("--out", required=True)

    m = sub.add_parser("serve-env-mock", help="serve an environment over the JSON-lines bridge")
    m.add_argument("--env", default="scripted", help="scripted, pendulum or hopper1d")
    m.add_argument("--host", default="127.0.0.1")
    m.add_argument("--port", type=int, default=0)
    m.add_argument("--obs-dim", type=int, default=17)
    m.add_argument("--act-dim", type=int, default=6)
    m.add_argument("--episode-length", type=int, default=1000)
    return parser


COMMANDS = {"train": cmd_train, "summarize": cmd_summarize, "plot-data": cmd_plot_data,
            "serve-env-mock": cmd_serve_env_mock}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except QSACError as exc:
        print(f"qsac {args.command}: {exc}", file=sys.stderr)
        return 2
