"""Command-line entry point: ``neurosym <command> ...``.

Exit codes: 0 SAT/success, 1 UNSAT, 2 UNKNOWN, 64 usage error,
65 input format error, 70 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import nnet
from .dataset import Dataset, DatasetError
from .lang import LangError, parse, print_file
from .loss_encode import DEFAULT_ALPHA, DEFAULT_BETA
from .mixed_solver import MixedConfig, MixedSolverError, format_value, load_models
from .mixed_solver import solve as mixed_solve
from .smt import SmtBridge, SmtError

EXIT_SAT = 0
EXIT_UNSAT = 1
EXIT_UNKNOWN = 2
EXIT_USAGE = 64
EXIT_DATAERR = 65
EXIT_SOFTWARE = 70

VERDICT_EXIT = {"SAT": EXIT_SAT, "UNSAT": EXIT_UNSAT, "UNKNOWN": EXIT_UNKNOWN}


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which means UNKNOWN here
        raise UsageError(f"{self.prog}: {message}")


def _default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


def _names(text: str) -> list[str]:
    out = [t.strip() for t in text.split(",") if t.strip()]
    if not out:
        raise UsageError(f"empty name list {text!r}")
    return out


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _load_constraints(path: str):
    try:
        return parse(_read_text(path))
    except LangError as exc:
        raise InputError(f"{path}:{exc}") from None


def _program(name: str):
    from .harness import get_program

    try:
        return get_program(name)
    except KeyError:
        raise UsageError(f"unknown program {name!r}") from None


def _train_config(args) -> nnet.TrainConfig:
    base = nnet.TrainConfig()
    try:
        hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else base.hidden
        return replace(
            base, hidden=hidden, seed=args.seed,
            max_epochs=args.epochs or base.max_epochs,
            learning_rate=args.lr or base.learning_rate,
            batch_size=args.batch_size or base.batch_size,
            optimizer=args.optimizer or base.optimizer,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _mixed_config(args) -> MixedConfig:
    try:
        return MixedConfig(
            max_enumerations=args.max_enum, mixed2_trials=args.trials, max_trial1=args.trials,
            alpha=args.alpha, beta=args.beta, seed=args.seed, compat_unsat=args.compat_unsat,
            jobs=args.jobs, bridge=SmtBridge.from_env(),
        )
    except (ValueError, SmtError) as exc:
        raise UsageError(str(exc)) from None


# -- commands -----------------------------------------------------------------


def cmd_check(args) -> int:
    cf = _load_constraints(args.file)
    if args.print_ast:
        sys.stdout.write(print_file(cf))
    else:
        print(f"ok: {len(cf.decls)} declarations, {len(cf.symbolic)} assertions, "
              f"{len(cf.neural)} neural constraints")
    return EXIT_SAT


def cmd_train(args) -> int:
    from .harness import split

    try:
        data = Dataset.load(args.data)
        inputs, outputs = _names(args.inputs), _names(args.outputs)
        for name in inputs + outputs:
            data.index(name)
    except (DatasetError, OSError) as exc:
        raise InputError(str(exc)) from None
    cfg = _train_config(args)
    train_set, held_out = split(data, args.split, args.seed)
    model, rep = nnet.train(train_set, inputs, outputs, cfg)
    acc = nnet.accuracy(model, held_out)
    nnet.save(model, args.model)
    print(f"accuracy={acc:.4f} rows={len(data)} train_rows={len(train_set)} "
          f"epochs={rep.epochs_run} model={args.model}")
    return EXIT_SAT


def cmd_sample(args) -> int:
    from .harness import sample

    p = _program(args.program)
    data = sample(p, args.n, args.seed, jobs=args.jobs)
    if args.out:
        data.save(args.out)
        print(f"rows={len(data)} out={args.out}")
    else:
        sys.stdout.write(data.to_csv())
    return EXIT_SAT


def cmd_solve(args) -> int:
    cfg = _mixed_config(args)
    cf = _load_constraints(args.file)
    base = Path(args.model_dir) if args.model_dir else Path(args.file).resolve().parent
    try:
        models = load_models(cf, base)
    except (OSError, nnet.ModelError, ValueError) as exc:
        raise InputError(f"cannot load model: {exc}") from None
    try:
        res = mixed_solve(cf, models, cfg)
    except MixedSolverError as exc:
        raise InputError(str(exc)) from None
    if res.verdict == "SAT":
        pairs = " ".join(f"{k}={format_value(v)}" for k, v in sorted(res.assignment.items()))
        print(f"SAT {pairs}".rstrip())
    else:
        print(res.verdict)
    if args.report:
        sys.stderr.write(res.report())
    return VERDICT_EXIT[res.verdict]


def cmd_bench(args) -> int:
    from .harness import (
        TaskConfig, format_table, loop_suite, program_names, run_exploit_task, run_loop_task,
    )

    cfg = TaskConfig(
        runs=args.runs, seed=args.seed, train=_train_config(args), workdir=args.workdir, jobs=args.jobs,
        solver=_mixed_config(args),
    )
    if args.suite == "exploit":
        reports = [run_exploit_task(cfg=cfg)]
    else:
        programs = loop_suite()
        if args.programs:
            wanted = _names(args.programs)
            known = set(program_names())
            bad = [n for n in wanted if n not in known]
            if bad:
                raise UsageError(f"unknown program {bad[0]!r}")
            programs = [p for p in programs if p.name in wanted]
        reports = []
        for p in programs:
            reports.append(run_loop_task(p, cfg))
            if args.verbose:
                sys.stderr.write(reports[-1].to_kv() + "\n")
    sys.stdout.write(format_table(reports))
    if args.suite == "exploit":
        sys.stdout.write(reports[0].to_kv())
    return EXIT_SAT


def cmd_explain(args) -> int:
    try:
        model = nnet.load(args.model)
    except (OSError, nnet.ModelError, ValueError) as exc:
        raise InputError(f"cannot load model: {exc}") from None
    for name, score in nnet.explain(model):
        print(f"{name} {score:.4f}")
    return EXIT_SAT


# -- parser -------------------------------------------------------------------


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    d = MixedConfig()
    p.add_argument("--max-enum", type=int, default=d.max_enumerations,
                   help="gradient steps per search trial")
    p.add_argument("--trials", type=int, default=d.mixed2_trials,
                   help="search trials per mixed component")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="strict-inequality margin")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA, help="disequality offset")
    p.add_argument("--compat-unsat", action="store_true", help="report UNKNOWN as UNSAT")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden", help="comma-separated hidden layer widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("sgd", "adam"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="neurosym", description="Neuro-symbolic constraint solving.")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=_default_jobs())

    p = sub.add_parser("check", help="parse and type-check a constraint file")
    p.add_argument("file")
    p.add_argument("--print-ast", action="store_true", help="print the canonical form")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("train", help="fit a network on a dataset CSV")
    p.add_argument("data")
    p.add_argument("--in", dest="inputs", required=True, help="input columns")
    p.add_argument("--out", dest="outputs", required=True, help="output columns")
    p.add_argument("--model", required=True, help="model file to write")
    p.add_argument("--split", type=float, default=0.8, help="training share")
    _add_train_flags(p)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="execute a built-in program on random inputs")
    p.add_argument("--program", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="solve a constraint file")
    p.add_argument("file")
    p.add_argument("--model-dir", help="directory for relative model paths")
    p.add_argument("--report", action="store_true", help="write solver statistics to stderr")
    _add_solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run the loop suite or the exploit task")
    p.add_argument("--suite", choices=("loops", "exploit"), default="loops")
    p.add_argument("--programs", help="comma-separated subset of the loop suite")
    p.add_argument("--runs", type=int, default=2000, help="program executions per task")
    p.add_argument("--workdir", help="keep datasets, models and constraint files here")
    p.add_argument("--verbose", action="store_true")
    _add_solver_flags(p)
    _add_train_flags(p)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("explain", help="rank a model's inputs by influence")
    p.add_argument("model")
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_DATAERR
    except Exception as exc:  # noqa: BLE001 - every other failure maps to 70
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOFTWARE


if __name__ == "__main__":
    sys.exit(main())
