"""
Command-line entry point.

    python -m app.main <subcommand> [options]

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from app.config import Settings, load_settings
from app.core.circuit import ComponentPool
from app.core.checkpoint import load_classifier, load_generator, save_classifier, save_generator
from app.core.dataset import SplitSpec, generate_dataset, read_records, sample_pool, split, write_records
from app.core.encoding import VOCAB, EncodingMode, detokenize, encode_topology, parse_topology
from app.core.errors import ArtifactExists, CheckpointError, ParseError, UsageError, WorkbenchError
from app.core.evaluation import (
    AblationSettings,
    ablation_run,
    eval_metrics,
    generate_unique,
    write_histogram,
    write_report,
)
from app.core.metrics import MetricsLog
from app.core.sampling import LMSampler
from app.core.simulator import oracle
from app.core.training import evaluate_classifier, pretrain_lm, refine, train_classifier
from app.logging_config import configure_logging
from app.schemas.config import DUTY_CYCLES

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _guard(path: Path, settings: Settings) -> Path:
    if path.exists() and not settings.run.force:
        raise ArtifactExists(f"{path} exists (use --force to overwrite)")
    return path


def _metrics(settings: Settings, run: str) -> MetricsLog:
    return MetricsLog(Path(settings.run.metrics_log), run)


def _print_pairs(pairs: dict[str, Any]) -> None:
    for key, value in pairs.items():
        if isinstance(value, float):
            value = format(value, ".6g")
        print(f"{key}={value}")


def _dataset(settings: Settings):
    if settings.data.path is None:
        raise UsageError("no dataset given: pass --data or set data.path")
    return read_records(Path(settings.data.path))


def _load_pair(args, settings: Settings):
    lm, mode, _ = load_generator(args.lm, settings.model, len(VOCAB))
    clf, clf_mode = load_classifier(args.clf, settings.model, len(VOCAB))
    if clf_mode is not mode:
        raise CheckpointError(f"generator uses {mode.value} encoding but classifier uses {clf_mode.value}")
    return lm, clf, mode


# ==================== Subcommands ====================


def cmd_gen_data(args, settings: Settings) -> int:
    out = _guard(args.out, settings)
    records = generate_dataset(settings.data.n, settings.sim, settings.data, threads=settings.run.threads)
    count = write_records(out, records)
    _print_pairs({"records": count, "out": str(out)})
    return 0


def cmd_simulate(args, settings: Settings) -> int:
    text = args.netlist.read_text(encoding="utf-8").strip() if args.netlist else args.inline
    pool = ComponentPool.parse(args.pool)
    topology = parse_topology(text, pool, EncodingMode(args.encoding))
    result = oracle(topology, args.duty, settings.sim)
    pairs: dict[str, Any] = {"valid": int(result.valid), "efficiency": result.efficiency, "reason": result.reason}
    if result.sim is not None:
        sim = result.sim
        pairs.update({
            "status": sim.status.value,
            "v_out_avg": sim.v_out_avg,
            "p_in": sim.p_in,
            "p_out": sim.p_out,
            "sim_efficiency": sim.efficiency,
            "periods_run": sim.periods_run,
            "converged": int(sim.converged),
        })
    _print_pairs(pairs)
    return 0


def cmd_train_clf(args, settings: Settings) -> int:
    out = _guard(args.out, settings)
    mode = EncodingMode(settings.data.encoding)
    train, val, test = split(_dataset(settings), SplitSpec.from_config(settings.data))
    clf, report = train_classifier(train, val, settings.model, settings.train, mode, _metrics(settings, "train-clf"))
    save_classifier(out, clf, mode)
    pairs = {"val_f1": report.scores.f1, "val_precision": report.scores.precision,
             "val_recall": report.scores.recall, "best_epoch": report.best_epoch}
    if test:
        scores = evaluate_classifier(clf, test, mode)
        pairs.update({"test_f1": scores.f1, "test_precision": scores.precision, "test_recall": scores.recall})
    _print_pairs(pairs)
    return 0


def cmd_train_lm(args, settings: Settings) -> int:
    out = _guard(args.out, settings)
    mode = EncodingMode(settings.data.encoding)
    train, val, _ = split(_dataset(settings), SplitSpec.from_config(settings.data))
    result = pretrain_lm(train, val, settings.model, settings.train, mode, _metrics(settings, "train-lm"))
    save_generator(out, result.model, mode)
    _print_pairs({"val_nll": result.best_score, "best_epoch": result.best_epoch})
    return 0


def cmd_refine(args, settings: Settings) -> int:
    out = _guard(args.out, settings)
    lm, clf, mode = _load_pair(args, settings)
    train, _, _ = split(_dataset(settings), SplitSpec.from_config(settings.data))
    result = refine(lm, clf, train, settings.model, settings.train, settings.decode, mode,
                    _metrics(settings, "refine"), settings.eval.threshold)
    save_generator(out, result.model, mode, result.loss_weights)
    _print_pairs({"clf_valid_fraction": result.best_score, "best_epoch": result.best_epoch, **result.loss_weights})
    return 0


def cmd_sample(args, settings: Settings) -> int:
    lm, mode, _ = load_generator(args.lm, settings.model, len(VOCAB))
    target = EncodingMode(args.encoding) if args.encoding else mode
    seed = settings.decode.seed
    rng = np.random.default_rng(seed)
    pools = [sample_pool(rng) for _ in range(args.n)]
    rngs = [np.random.default_rng([seed, i]) for i in range(args.n)]
    for pool, ids in zip(pools, LMSampler(lm, settings.decode).generate(pools, rngs)):
        text = detokenize(ids)
        if target is not mode:
            try:
                text = encode_topology(parse_topology(text, pool, mode), target)
            except ParseError:
                pass
        print(f"# pool {pool}")
        print(text)
        print()
    return 0


def cmd_eval(args, settings: Settings) -> int:
    report_path = _guard(Path(f"{args.out}.tsv"), settings)
    hist_path = _guard(Path(f"{args.out}.hist.tsv"), settings)
    lm, clf, mode = _load_pair(args, settings)
    cfg = settings.eval
    samples = generate_unique(LMSampler(lm, settings.decode), cfg.n_unique, cfg.max_attempts,
                              mode, cfg.seed, cfg.batch)
    result = eval_metrics(samples, clf, settings.sim, mode, cfg, settings.run.threads, label=args.lm.stem)
    write_report(report_path, [result.report])
    write_histogram(hist_path, result.histogram)
    _print_pairs(result.report.model_dump())
    return 0


def cmd_ablate(args, settings: Settings) -> int:
    out = _guard(args.out, settings)
    records = _dataset(settings)
    ablation = AblationSettings(
        model=settings.model, train=settings.train, decode=settings.decode, eval=settings.eval,
        sim=settings.sim, split=SplitSpec.from_config(settings.data), threads=settings.run.threads,
        metrics_log=Path(settings.run.metrics_log),
    )
    reports = ablation_run(records, ablation)
    write_report(out, reports)
    for report in reports:
        _print_pairs({f"{report.label}.E(f_S_valid)": report.e_fsvalid, f"{report.label}.E(f_S_eff)": report.e_fseff,
                      f"{report.label}.rho": report.rho})
    return 0


def cmd_stats(args, settings: Settings) -> int:
    records = _dataset(settings)
    n = len(records)
    valid = [r for r in records if r.valid]
    pairs: dict[str, Any] = {
        "records": n,
        "valid_fraction": len(valid) / n if n else 0.0,
        "mean_efficiency": float(np.mean([r.efficiency for r in valid])) if valid else math.nan,
    }
    for duty in DUTY_CYCLES:
        group = [r for r in records if r.duty == duty]
        pairs[f"valid_fraction.duty_{duty}"] = (sum(r.valid for r in group) / len(group)) if group else math.nan
    train, val, test = split(records, SplitSpec.from_config(settings.data))
    pairs.update({"train": len(train), "val": len(val), "test": len(test)})
    _print_pairs(pairs)
    return 0


# ==================== Parser ====================


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file (default: ./workbench.conf)")
    common.add_argument("--threads", type=int, help="worker processes, 0 = all cores")
    common.add_argument("--force", action="store_true", default=None, help="overwrite existing artifacts")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--metrics-log", help="per-step metrics TSV")

    parser = _Parser(prog="csyn", description="Circuit topology synthesis workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate an oracle-labeled dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--dedup", action="store_true", default=None)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("simulate", parents=[common], help="simulate one netlist")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--netlist", type=Path)
    source.add_argument("--inline")
    p.add_argument("--pool", required=True)
    p.add_argument("--duty", type=float, required=True, choices=DUTY_CYCLES)
    p.add_argument("--encoding", choices=[m.value for m in EncodingMode], default=EncodingMode.ARRAY.value)
    p.set_defaults(handler=cmd_simulate)

    for name, handler, help_text in (
        ("train-clf", cmd_train_clf, "train the validity classifier"),
        ("train-lm", cmd_train_lm, "pretrain the generator on valid records"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", type=Path, help="dataset file (overrides data.path)")
        p.add_argument("--out", type=Path, required=True)
        p.set_defaults(handler=handler)

    p = sub.add_parser("refine", parents=[common], help="Gumbel straight-through refinement")
    p.add_argument("--lm", type=Path, required=True)
    p.add_argument("--clf", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset file (overrides data.path)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("sample", parents=[common], help="sample netlists from a generator")
    p.add_argument("--lm", type=Path, required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--encoding", choices=[m.value for m in EncodingMode])
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--top-p", type=float)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="evaluate a generator")
    p.add_argument("--lm", type=Path, required=True)
    p.add_argument("--clf", type=Path, required=True)
    p.add_argument("--n-unique", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="eval", help="output prefix for <out>.tsv and <out>.hist.tsv")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="NL vs array encoding ablation")
    p.add_argument("--data", type=Path, help="dataset file (overrides data.path)")
    p.add_argument("--out", type=Path, default=Path("ablation.tsv"))
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("stats", parents=[common], help="dataset statistics")
    p.add_argument("--data", type=Path, help="dataset file (overrides data.path)")
    p.set_defaults(handler=cmd_stats)
    return parser


def _overrides(args) -> dict[str, dict[str, Any]]:
    """Flag values mapped onto config sections; unset flags are None and ignored."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides: dict[str, dict[str, Any]] = {
        "run": {"threads": get("threads"), "force": get("force"), "log_level": get("log_level"),
                "metrics_log": get("metrics_log")},
    }
    if args.command == "gen-data":
        overrides["data"] = {"n": get("n"), "seed": get("seed"), "dedup": get("dedup")}
    elif args.command == "sample":
        overrides["decode"] = {"seed": get("seed"), "temperature": get("temperature"),
                               "top_k": get("top_k"), "top_p": get("top_p")}
    elif args.command == "eval":
        overrides["eval"] = {"n_unique": get("n_unique"), "seed": get("seed")}
    if get("data") is not None:
        overrides.setdefault("data", {})["path"] = str(get("data"))
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = load_settings(args.config, _overrides(args))
        configure_logging(settings.run.log_level)
        return args.handler(args, settings)
    except WorkbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e.filename or ''}: {e.strerror}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
