"""Command-line experiment harness.

Subcommands: generate-data, train, eval, ablate, bench-latency, report.
Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then explicit flags (highest priority).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .agents import ModelAgent, ScriptedAgent
from .baselines import (
    DenoiserConfig,
    SelectionStrategy,
    ablation_strategies,
    bc_fit,
    bc_infer,
    choose,
    denoiser_fit,
    denoiser_sample,
    init_bc_model,
    init_denoiser_model,
)
from .checkpoint import CheckpointError, load_model, save_model
from .envs import (
    ENVS,
    GenerationError,
    TaskSpec,
    build_chunks,
    generate_dataset,
    load_dataset,
    make_env,
    rollout,
    save_dataset,
)
from .metrics import RolloutRecord, rollout_specializes, score_calibration, summarize, time_calls
from .numerics import TrainingError, config_hash, dumps_reals, make_rng
from .policy import ChoicePolicyModel, FitConfig, NormalizationStats, PolicyConfig, fit, init_choice_model, propose

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ROLLOUT_SCHEMA = "choice-policy-rollouts/1"
REPORT_SCHEMA = "choice-policy-report/1"
ALGOS = ("choice", "bc", "denoiser", "scripted")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    task: str = "fork"
    algo: str = "choice"
    k: int = 5
    horizon: int = 8
    epochs: int = 100
    batch: int = 64
    seed: int = 0
    episodes: int = 100
    selection: str = "score"
    stride: int | None = None
    heldout: int = 50
    calls: int = 1000
    out: str | None = None
    data: str | None = None
    checkpoint: list[str] = field(default_factory=list)

    def recorded(self) -> dict:
        """Settings that determine results; the output location is not one of them."""
        d = asdict(self)
        d.pop("out")
        return d

    def hash(self) -> str:
        return config_hash(self.recorded())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value: str):
    t = _FIELD_TYPES[key]
    if key == "checkpoint":
        return [v.strip() for v in value.split(",") if v.strip()]
    if value.lower() in ("", "none"):
        return None
    try:
        return int(value) if t.startswith("int") else value
    except ValueError as e:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from e


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment; keys mirror the flag names."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{n}: expected key = value with a known key, got {raw!r}")
        out[key] = _coerce(key, value.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None and v != []:
            values[f.name] = v
    cfg = RunConfig(**values)
    if cfg.task not in ENVS:
        raise ConfigError(f"unknown task {cfg.task!r}; choose from {sorted(ENVS)}")
    if cfg.algo not in ALGOS:
        raise ConfigError(f"unknown algo {cfg.algo!r}; choose from {list(ALGOS)}")
    for name in ("k", "horizon", "epochs", "batch", "episodes", "heldout", "calls"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"--{name} must be >= 1")
    try:
        SelectionStrategy.parse(cfg.selection)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return cfg


def _need(cfg: RunConfig, name: str) -> str:
    v = getattr(cfg, name)
    if not v:
        raise ConfigError(f"--{name} is required for this command")
    return v


def _existing(path: str) -> str:
    if not Path(path).exists():
        raise ConfigError(f"referenced file does not exist: {path}")
    return path


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def _stderr(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# generate-data / train


def cmd_generate_data(cfg: RunConfig) -> None:
    out = _need(cfg, "out")
    env = make_env(cfg.task)
    try:
        episodes = generate_dataset(env, cfg.episodes, cfg.seed)
    except GenerationError as e:
        raise DataError(str(e)) from e
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        save_dataset(out, env, episodes, cfg.seed)
    except OSError as e:
        raise DataError(f"cannot write {out}: {e}") from e
    modes = np.bincount([ep.mode for ep in episodes], minlength=env.spec.modes)
    print(f"wrote {out}: task={cfg.task} episodes={len(episodes)} seed={cfg.seed} mode_counts={modes.tolist()}")


def _load_data(path: str):
    try:
        header, episodes = load_dataset(_existing(path))
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}") from e
    return header, episodes, make_env(TaskSpec(**header["task"]))


def cmd_train(cfg: RunConfig) -> None:
    out = _need(cfg, "out")
    header, episodes, env = _load_data(_need(cfg, "data"))
    if cfg.algo == "scripted":
        raise ConfigError("the scripted policy has nothing to train")
    obs, chunks = build_chunks(episodes, cfg.horizon, env.hold_action)
    norm = NormalizationStats.fit(obs, chunks)
    xn, yn = norm.normalize_obs(obs), norm.normalize_chunk(chunks)
    fcfg = FitConfig(epochs=cfg.epochs, batch_size=cfg.batch, seed=cfg.seed)
    if cfg.algo == "denoiser":
        model = init_denoiser_model(DenoiserConfig(env.obs_dim, env.action_dim, cfg.horizon), cfg.seed)
        train = denoiser_fit
    else:
        pcfg = PolicyConfig(env.obs_dim, env.action_dim, cfg.horizon, cfg.k if cfg.algo == "choice" else 1)
        model = (init_choice_model if cfg.algo == "choice" else init_bc_model)(pcfg, cfg.seed)
        train = fit if cfg.algo == "choice" else bc_fit
    model.norm = norm
    try:
        log = train(model, xn, yn, fcfg)
    except (TrainingError, FloatingPointError) as e:
        raise TrainingError(f"training diverged: {e}") from e
    meta = {"run_config_hash": cfg.hash(), "data_hash": header["config_hash"], "task": env.spec.to_dict(),
            "seed": cfg.seed, "epochs": cfg.epochs, "batch": cfg.batch, "samples": len(obs)}
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        h = save_model(out, model, meta)
    except OSError as e:
        raise DataError(f"cannot write {out}: {e}") from e
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "action_loss", "score_loss"])
    for i, row in enumerate(zip(log.epoch_loss, log.epoch_action_loss, log.epoch_score_loss)):
        w.writerow([i, *(format(v, ".17g") for v in row)])
    _write(Path(out + ".loss.csv"), buf.getvalue())
    print(f"wrote {out} (kind={model.kind} hash={h}) final action loss {log.epoch_action_loss[-1]:.6g}")


# ---------------------------------------------------------------------------
# eval / ablate / report


def _load_checkpoint(path: str):
    try:
        return load_model(_existing(path))
    except CheckpointError as e:
        raise ConfigError(str(e)) from e


def _check_compatible(cfg: RunConfig, args: argparse.Namespace, model, env) -> None:
    c = model.config
    if (c.obs_dim, c.action_dim) != (env.obs_dim, env.action_dim):
        raise ConfigError(f"checkpoint dims (obs {c.obs_dim}, act {c.action_dim}) do not match task {cfg.task} "
                          f"(obs {env.obs_dim}, act {env.action_dim})")
    if args.horizon is not None and args.horizon != c.horizon:
        raise ConfigError(f"--horizon {args.horizon} does not match checkpoint horizon {c.horizon}")
    if isinstance(model, ChoicePolicyModel) and args.k is not None and args.k != c.n_proposals:
        raise ConfigError(f"--k {args.k} does not match checkpoint K={c.n_proposals}")
    if cfg.stride is not None and not 1 <= cfg.stride <= c.horizon:
        raise ConfigError(f"--stride must be in [1, {c.horizon}]")


def _heldout_seed(seed: int) -> int:
    return int(make_rng(seed, "heldout").integers(2**31))


def _run_strategies(cfg, args, strategies: list[str]) -> tuple[dict, list[RolloutRecord]]:
    env = make_env(cfg.task)
    header = {"schema": ROLLOUT_SCHEMA, "config_hash": cfg.hash(), "config": cfg.recorded(),
              "stages": list(env.stages), "phases": list(env.phases)}
    if cfg.algo == "scripted" and not cfg.checkpoint:
        model = None
        header["policy"] = "scripted"
    else:
        model, _ = _load_checkpoint(_need(cfg, "checkpoint")[0])
        _check_compatible(cfg, args, model, env)
        header["policy"] = model.kind
        header["checkpoint_hash"] = json.loads(Path(cfg.checkpoint[0]).read_text())["config_hash"]
        k = model.config.n_proposals if isinstance(model, ChoicePolicyModel) else 1
        for s in strategies:
            st = SelectionStrategy.parse(s)
            if st.kind != "score" and not isinstance(model, ChoicePolicyModel):
                raise ConfigError(f"selection {s!r} needs a choice checkpoint")
            if st.kind == "single" and st.index >= k:
                raise ConfigError(f"selection {s!r} out of range for K={k}")
    records = []
    for s in strategies:
        for i in range(cfg.episodes):
            agent = ScriptedAgent() if model is None else ModelAgent(model, s, cfg.stride)
            try:
                r = rollout(env, agent, make_rng(cfg.seed, "eval", i))
            except FloatingPointError as e:
                raise TrainingError(f"rollout {i} produced non-finite values: {e}") from e
            records.append(RolloutRecord.from_result(i, s, r))
    if isinstance(model, ChoicePolicyModel):
        held = generate_dataset(env, cfg.heldout, _heldout_seed(cfg.seed))
        obs, chunks = build_chunks(held, model.config.horizon, env.hold_action)
        header["spearman"] = score_calibration(model, obs, chunks)
    return header, records


def write_rollout_log(path: Path, header: dict, records: list[RolloutRecord]) -> None:
    lines = [dumps_reals(header)] + [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    _write(path, "\n".join(lines) + "\n")


def read_rollout_log(path: Path) -> tuple[dict, list[RolloutRecord]]:
    try:
        lines = Path(_existing(str(path))).read_text().splitlines()
        header = json.loads(lines[0])
        if header.get("schema") != ROLLOUT_SCHEMA:
            raise DataError(f"{path}: unsupported schema {header.get('schema')!r}")
        if header.get("config_hash") != config_hash(header["config"]):
            raise DataError(f"{path}: config hash does not match the recorded config")
        return header, [RolloutRecord(**json.loads(l)) for l in lines[1:] if l.strip()]
    except (IndexError, KeyError, TypeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: malformed rollout log ({e})") from e


def render_reports(header: dict, records: list[RolloutRecord]) -> dict[str, str]:
    """Every report file as text, derived only from the rollout log."""
    stages, phases = header["stages"], header["phases"]
    strategies = list(dict.fromkeys(r.strategy for r in records))
    reports = {s: summarize([r for r in records if r.strategy == s], stages, phases, s, header.get("spearman"))
               for s in strategies}

    table = io.StringIO()
    w = csv.writer(table, lineterminator="\n")
    w.writerow(["strategy", "trials", "successes", "success_rate", *(f"stage_{s}" for s in stages)])
    for s, rep in reports.items():
        w.writerow([s, rep.trials, rep.successes, format(rep.success_rate, ".6f"), *rep.stage_counts.values()])

    heads = io.StringIO()
    w = csv.writer(heads, lineterminator="\n")
    w.writerow(["strategy", "phase", "head", "count"])
    for s, rep in reports.items():
        for p, hist in rep.head_histograms.items():
            for h, n in hist.items():
                w.writerow([s, p, h, n])

    cfg = header["config"]
    lines = [f"schema: {REPORT_SCHEMA}", f"config_hash: {header['config_hash']}", f"policy: {header['policy']}"]
    if "checkpoint_hash" in header:
        lines.append(f"checkpoint_hash: {header['checkpoint_hash']}")
    lines += [f"{k}: {cfg[k]}" for k in ("task", "seed", "episodes", "stride")]
    if header.get("spearman") is not None:
        lines.append(f"score_spearman: {header['spearman']:.6f}")
    for s, rep in reports.items():
        group = [r for r in records if r.strategy == s]
        lines += ["", f"[{s}]", f"trials: {rep.trials}", f"successes: {rep.successes}",
                  f"success_rate: {rep.success_rate:.6f}"]
        lines += [f"stage.{k}: {v}" for k, v in rep.stage_counts.items()]
        lines += [f"outcome.{k}: {v}" for k, v in rep.reasons.items()]
        if any(h >= 0 for r in group for h in r.heads):
            lines.append(f"specialized_rollouts: {sum(rollout_specializes(r) for r in group)}")
    return {"metrics.csv": table.getvalue(), "heads.csv": heads.getvalue(), "summary.txt": "\n".join(lines) + "\n"}


def _emit(outdir: Path, header: dict, records: list[RolloutRecord]) -> None:
    write_rollout_log(outdir / "rollouts.jsonl", header, records)
    files = render_reports(header, records)
    for name, text in files.items():
        _write(outdir / name, text)
    sys.stdout.write(files["metrics.csv"])


def cmd_eval(cfg: RunConfig, args) -> None:
    outdir = Path(_need(cfg, "out"))
    header, records = _run_strategies(cfg, args, [cfg.selection])
    header["command"] = "eval"
    _emit(outdir, header, records)


def cmd_ablate(cfg: RunConfig, args) -> None:
    outdir = Path(_need(cfg, "out"))
    model, _ = _load_checkpoint(_need(cfg, "checkpoint")[0])
    if not isinstance(model, ChoicePolicyModel):
        raise ConfigError("ablate needs a choice checkpoint")
    strategies = [str(s) for s in ablation_strategies(model.config.n_proposals)]
    header, records = _run_strategies(cfg, args, strategies)
    header["command"] = "ablate"
    _emit(outdir, header, records)


def cmd_report(cfg: RunConfig) -> None:
    outdir = Path(_need(cfg, "out"))
    header, records = read_rollout_log(outdir / "rollouts.jsonl")
    files = render_reports(header, records)
    for name, text in files.items():
        _write(outdir / name, text)
    sys.stdout.write(files["metrics.csv"])


# ---------------------------------------------------------------------------
# latency


def _predictor(model, rng):
    if isinstance(model, ChoicePolicyModel):
        return lambda o: choose(propose(model, o), SelectionStrategy("score"))[0]
    if model.kind == "bc":
        return lambda o: bc_infer(model, o)
    return lambda o: denoiser_sample(model, o, rng)


def cmd_bench_latency(cfg: RunConfig) -> None:
    outdir = Path(_need(cfg, "out"))
    paths = _need(cfg, "checkpoint")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["checkpoint", "kind", "calls", "mean_s", "p50_s", "p90_s", "p99_s"])
    for path in paths:
        model, _ = _load_checkpoint(path)
        obs = make_rng(cfg.seed, "latency").standard_normal((cfg.calls, model.config.obs_dim))
        predict = _predictor(model, make_rng(cfg.seed, "latency_sampling"))
        stats = time_calls(lambda i: predict(obs[i % len(obs)]), cfg.calls)
        w.writerow([path, model.kind, stats["calls"], *(format(stats[k], ".6e") for k in ("mean", "p50", "p90", "p99"))])
    _write(outdir / "latency.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--task", help=f"one of {sorted(ENVS)}")
    common.add_argument("--algo", help=f"one of {list(ALGOS)}")
    common.add_argument("--k", type=int, help="number of proposals K")
    common.add_argument("--horizon", type=int, help="chunk length T")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--episodes", type=int, help="demonstrations to generate or rollouts to evaluate")
    common.add_argument("--selection", help="score, random, mean or single:<k>")
    common.add_argument("--stride", type=int, help="actions executed per predicted chunk (default: horizon)")
    common.add_argument("--heldout", type=int, help="held-out demos for score calibration")
    common.add_argument("--calls", type=int, help="timed calls per model in bench-latency")
    common.add_argument("--out", help="output file (generate-data, train) or directory (others)")
    common.add_argument("--data", help="dataset file for train")
    common.add_argument("--checkpoint", action="append", default=[], help="model checkpoint (repeatable for bench-latency)")

    p = argparse.ArgumentParser(prog="choice-policy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("generate-data", "train", "eval", "ablate", "bench-latency", "report"):
        sub.add_parser(name, parents=[common])
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        if args.command == "generate-data":
            cmd_generate_data(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args)
        elif args.command == "ablate":
            cmd_ablate(cfg, args)
        elif args.command == "bench-latency":
            cmd_bench_latency(cfg)
        else:
            cmd_report(cfg)
    except ConfigError as e:
        _stderr(f"config error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        _stderr(f"data error: {e}")
        return EXIT_DATA
    except TrainingError as e:
        _stderr(f"numerical failure: {e}")
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
