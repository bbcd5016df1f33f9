"""Training runs, per-episode metrics and the classical-vs-quantum comparison reports.

A run directory holds:

``config.json``       the full :class:`TrainConfig`, enough to repeat the run
``metrics.csv``       one row per finished episode (see ``METRICS_COLUMNS``)
``eval.csv``          periodic deterministic-policy evaluations
``checkpoint.json``   final policy parameters
``circuit.json``      the circuit used (quantum runs only)

Only the ``sps`` column depends on wall-clock time; everything else is a pure
function of the config.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import envs
from .errors import ConfigurationError, QSACError, RunDataError, StartupError
from .nn import DEFAULT_HIDDEN
from .policy import LOG_STD_BOUNDS, GaussianMLPPolicy, QuantumPolicy, ReuploadingPolicyConfig, save_checkpoint
from .sac import SACAgent, SACTrainer, SacHyperparams, evaluate

log = logging.getLogger(__name__)

ALGOS = ("classical-sac", "quantum-sac")
ROLLING_WINDOW = 20
METRICS_COLUMNS = ("episode", "return", "avg_return_20", "steps", "cumulative_steps", "sps")
EVAL_COLUMNS = ("step", "mean_return", "min_return", "max_return")
TABLE_ROWS = ("Total Episodes", "Average Return", "Max Return", "Cumulative Steps", "Mean SPS")


@dataclass
class PolicySettings:
    """Policy architecture; ``hidden`` applies to classical runs, the rest to quantum runs."""

    n_layers: int = 2
    n_qubits: int | None = None
    use_input_scaling: bool = False
    log_std_bounds: tuple[float, float] = LOG_STD_BOUNDS
    hidden: tuple[int, ...] = DEFAULT_HIDDEN

    def __post_init__(self):
        self.log_std_bounds = tuple(float(b) for b in self.log_std_bounds)
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TrainConfig:
    algo: str = "classical-sac"
    env: str = "pendulum"
    seed: int = 0
    total_steps: int = 50_000
    eval_every: int = 1000
    eval_episodes: int = 10
    output_dir: str = "runs/run"
    sac: SacHyperparams = field(default_factory=SacHyperparams)
    policy: PolicySettings = field(default_factory=PolicySettings)

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ConfigurationError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.total_steps < 0 or self.eval_every < 0 or self.eval_episodes < 0:
            raise ConfigurationError("total_steps, eval_every and eval_episodes must be >= 0")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["sac"]["critic_hidden"] = list(self.sac.critic_hidden)
        doc["policy"]["log_std_bounds"] = list(self.policy.log_std_bounds)
        doc["policy"]["hidden"] = list(self.policy.hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        _reject_unknown(cls, doc, "config")
        if "sac" in doc:
            _reject_unknown(SacHyperparams, doc["sac"], "sac")
            doc["sac"] = SacHyperparams(**doc["sac"])
        if "policy" in doc:
            _reject_unknown(PolicySettings, doc["policy"], "policy")
            doc["policy"] = PolicySettings(**doc["policy"])
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def _reject_unknown(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{where} must be a mapping")
    unknown = set(doc) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {sorted(unknown)}")


@dataclass
class EpisodeMetrics:
    episode: int
    episode_return: float
    avg_return_20: float
    steps: int
    cumulative_steps: int
    sps: float

    def row(self) -> list[str]:
        return [str(self.episode), repr(self.episode_return), repr(self.avg_return_20),
                str(self.steps), str(self.cumulative_steps), repr(self.sps)]


def rolling_mean(values, window=ROLLING_WINDOW) -> float:
    tail = values[-window:]
    return math.fsum(tail) / len(tail)


# ---------------------------------------------------------------- training

def build_policy(config: TrainConfig, spec: envs.EnvSpec, rng):
    p = config.policy
    if config.algo == "quantum-sac":
        cfg = ReuploadingPolicyConfig(spec.obs_dim, spec.act_dim, n_layers=p.n_layers, n_qubits=p.n_qubits,
                                      use_input_scaling=p.use_input_scaling, log_std_bounds=p.log_std_bounds)
        return QuantumPolicy(cfg, rng)
    return GaussianMLPPolicy(spec.obs_dim, spec.act_dim, p.hidden, rng=rng, log_std_bounds=p.log_std_bounds)


def _open_env(name):
    try:
        return envs.make_env(name)
    except (QSACError, OSError) as exc:
        raise StartupError(f"cannot open environment {name!r}: {exc}") from exc


def run_training(config: TrainConfig) -> Path:
    """Train one agent and write its run directory; returns the directory path."""
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
    except OSError as exc:
        raise StartupError(f"output directory {out} is not writable: {exc}") from exc
    env = _open_env(config.env)
    eval_env = _open_env(config.env) if config.eval_every and config.eval_episodes else None
    try:
        rng = np.random.default_rng(config.seed)
        policy = build_policy(config, env.spec, rng)
        if isinstance(policy, QuantumPolicy):
            (out / "circuit.json").write_text(policy.spec.to_json() + "\n")
        agent = SACAgent(policy, env.spec, config.sac, rng)
        trainer = SACTrainer(agent, env, config.seed)
        _train_loop(config, trainer, eval_env, out)
        save_checkpoint(agent.policy, out / "checkpoint.json")
    finally:
        for e in (env, eval_env):
            if hasattr(e, "close"):
                e.close()
    return out


def _train_loop(config, trainer, eval_env, out):
    returns = []
    with open(out / "metrics.csv", "w", newline="") as mf, open(out / "eval.csv", "w", newline="") as ef:
        metrics, evals = csv.writer(mf), csv.writer(ef)
        metrics.writerow(METRICS_COLUMNS)
        evals.writerow(EVAL_COLUMNS)
        episode_clock = 0.0
        for _ in range(config.total_steps):
            t0 = time.perf_counter()
            info = trainer.train_step()
            episode_clock += time.perf_counter() - t0
            if info.episode_end:
                returns.append(info.episode_return)
                row = EpisodeMetrics(len(returns) - 1, info.episode_return, rolling_mean(returns),
                                     info.episode_steps, info.step, info.episode_steps / max(episode_clock, 1e-9))
                metrics.writerow(row.row())
                mf.flush()
                episode_clock = 0.0
            if eval_env is not None and info.step % config.eval_every == 0:
                scores = evaluate(trainer.agent, eval_env, config.eval_episodes, config.seed)
                mean = math.fsum(scores) / len(scores)
                evals.writerow([str(info.step), repr(mean), repr(min(scores)), repr(max(scores))])
                ef.flush()
                log.info("step %d  eval %.1f  episodes %d  alpha %.3f",
                         info.step, mean, len(returns), trainer.agent.alpha)


# ---------------------------------------------------------------- reading runs

def read_metrics(run_dir) -> list[EpisodeMetrics]:
    path = Path(run_dir) / "metrics.csv"
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise RunDataError(f"{path}: {exc}") from exc
    if not rows or tuple(rows[0]) != METRICS_COLUMNS:
        raise RunDataError(f"{path}: header must be {','.join(METRICS_COLUMNS)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        try:
            ep, ret, avg, steps, cum, sps = row
            out.append(EpisodeMetrics(int(ep), float(ret), float(avg), int(steps), int(cum), float(sps)))
        except ValueError as exc:
            raise RunDataError(f"{path}, line {n}: {exc}") from exc
    return out


def read_evals(run_dir) -> list[tuple[int, float]]:
    """(step, mean eval return) pairs from ``eval.csv``."""
    path = Path(run_dir) / "eval.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != EVAL_COLUMNS:
        raise RunDataError(f"{path}: header must be {','.join(EVAL_COLUMNS)}")
    return [(int(r[0]), float(r[1])) for r in rows[1:]]


def _run_label(run_dir, taken):
    label = Path(run_dir).name or str(run_dir)
    if label in taken:
        label = str(run_dir)
    taken.add(label)
    return label


# ---------------------------------------------------------------- summaries

def exact_mean(values) -> float:
    """Correctly rounded arithmetic mean."""
    values = list(values)
    return float(sum(map(Fraction, values)) / len(values))


def summarize_metrics(rows: list[EpisodeMetrics]) -> dict:
    if not rows:
        raise RunDataError("no finished episodes")
    returns = [r.episode_return for r in rows]
    return {
        "Total Episodes": len(rows),
        "Average Return": exact_mean(returns),
        "Max Return": max(returns),
        "Cumulative Steps": rows[-1].cumulative_steps,
        "Mean SPS": exact_mean(r.sps for r in rows),
    }


def summarize(run_dirs) -> dict:
    """Per-run Table-style summary; broken runs become ``{"run", "error"}`` entries."""
    taken, runs = set(), []
    for d in run_dirs:
        label = _run_label(d, taken)
        try:
            runs.append({"run": label, "path": str(d), **summarize_metrics(read_metrics(d))})
        except RunDataError as exc:
            runs.append({"run": label, "path": str(d), "error": str(exc)})
    return {"runs": runs, "ok": all("error" not in r for r in runs)}


def _fmt(value):
    if isinstance(value, int):
        return str(value)
    return f"{value:.2f}"


def format_table(summary: dict) -> str:
    """Aligned text table: one metric per row, one run per column."""
    good = [r for r in summary["runs"] if "error" not in r]
    header = ["Metric", *(r["run"] for r in good)]
    body = [[name, *(_fmt(r[name]) for r in good)] for name in TABLE_ROWS]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    for r in summary["runs"]:
        if "error" in r:
            lines.append(f"error: {r['run']}: {r['error']}")
    return "\n".join(lines) + "\n"


PLOT_FILES = {
    "return_vs_episode.csv": ("run", "episode", "return"),
    "avg_return_vs_episode.csv": ("run", "episode", "avg_return_20"),
    "sps_vs_avg_return.csv": ("run", "episode", "avg_return_20", "sps"),
}


def emit_plot_data(run_dirs, out_dir) -> dict:
    """Write the three long-format plot tables; returns {"files": [...], "errors": [...]}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    taken, loaded, errors = set(), [], []
    for d in run_dirs:
        label = _run_label(d, taken)
        try:
            rows = read_metrics(d)
            if not rows:
                raise RunDataError("no finished episodes")
            loaded.append((label, rows))
        except RunDataError as exc:
            errors.append({"run": label, "path": str(d), "error": str(exc)})
    written = []
    for name, columns in PLOT_FILES.items():
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for label, rows in loaded:
                for r in rows:
                    values = {"run": label, "episode": str(r.episode), "return": repr(r.episode_return),
                              "avg_return_20": repr(r.avg_return_20), "sps": repr(r.sps)}
                    w.writerow([values[c] for c in columns])
        written.append(str(out / name))
    return {"files": written, "errors": errors}
