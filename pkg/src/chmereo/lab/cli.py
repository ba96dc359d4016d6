"""``chmereo`` command line.

Exit codes: 0 success, 1 validation failure, 2 cap or limit exceeded, 3 I/O.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time

import numpy as np

from .. import __version__
from ..histories import (
    HistoryCapExceeded,
    Schedule,
    born_weight,
    consistency_threshold,
    decoherence_matrix,
    enumerate_histories,
)
from ..mereo import (
    OrderError,
    UnknownElement,
    check_pcr,
    domain_from_dict,
    history_consistent,
    is_strong_partition,
    partition_from_dict,
    partition_history_from_list,
    preserves_mereology,
)
from ..overlay import fmt_bool, fmt_float, no_go_experiment, write_overlay_csv
from .config import ConfigError, Experiment, build_experiment
from .rng import SplitMix64

EXIT_OK, EXIT_INVALID, EXIT_CAP, EXIT_IO = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CommandError(EXIT_INVALID, f"{path}: not valid JSON ({exc})") from None


def load_experiment(args) -> Experiment:
    doc = read_json(args.config)
    try:
        return build_experiment(doc, seed=args.seed, tol=args.tol, cap=args.cap)
    except ConfigError as exc:
        raise CommandError(EXIT_INVALID, "\n".join(exc.defects)) from None
    except (ValueError, TypeError, KeyError) as exc:
        raise CommandError(EXIT_INVALID, f"config: {exc}") from None


def _writer(buf):
    return csv.writer(buf, lineterminator="\n")


def _histories(exp: Experiment):
    try:
        h = exp.hamiltonian()
    except ConfigError as exc:
        raise CommandError(EXIT_INVALID, "\n".join(exc.defects)) from None
    sched = Schedule(exp.times, h, exp.prepare_time)
    try:
        return enumerate_histories(sched, exp.measurement_families, exp.initial_state, exp.cap)
    except HistoryCapExceeded as exc:
        raise CommandError(EXIT_CAP, str(exc)) from None


def cmd_validate(args, out, err) -> int:
    exp = load_experiment(args)
    out.write(f"valid {exp.digest}\n")
    return EXIT_OK


def cmd_weights(args, out, err) -> int:
    histories = _histories(load_experiment(args))
    w = _writer(out)
    w.writerow(["history", "selection", "weight"])
    total = 0.0
    rows = []
    for i, y in enumerate(histories):
        weight = born_weight(y)
        total += weight
        rows.append([i, y.label(), fmt_float(weight)])
    w.writerows(rows)
    w.writerow(["sum", "", fmt_float(total)])
    return EXIT_OK


def cmd_consistency(args, out, err) -> int:
    exp = load_experiment(args)
    histories = _histories(exp)
    d = decoherence_matrix(histories)
    bound = consistency_threshold(d, exp.tol)
    w = _writer(out)
    w.writerow(["pair", "abs_d", "consistent"])
    worst = 0.0
    for i in range(len(histories)):
        for j in range(i + 1, len(histories)):
            mag = float(abs(d[i, j]))
            worst = max(worst, mag)
            w.writerow([f"{i}:{j}", fmt_float(mag), fmt_bool(mag <= bound)])
    w.writerow(["verdict", fmt_float(worst), fmt_bool(worst <= bound)])
    return EXIT_OK


def sweep_rows(exp: Experiment, jobs: int = 1):
    if exp.sweep_parameter is None:
        raise CommandError(EXIT_INVALID, "sweep: config has no sweep section")
    if exp.split is None:
        raise CommandError(EXIT_INVALID, "sweep: config has no split section")
    try:
        return no_go_experiment(
            exp.split,
            list(exp.measurement_families),
            exp.hamiltonian_family(exp.sweep_parameter),
            exp.times,
            exp.initial_state,
            exp.sweep_values,
            eps=exp.eps,
            tol=exp.tol,
            prepare_time=exp.prepare_time,
            cap=exp.cap,
            jobs=jobs,
        )
    except HistoryCapExceeded as exc:
        raise CommandError(EXIT_CAP, str(exc)) from None
    except ValueError as exc:
        raise CommandError(EXIT_INVALID, f"sweep: {exc}") from None


def cmd_sweep(args, out, err) -> int:
    exp = load_experiment(args)
    t0 = time.perf_counter()
    rows = sweep_rows(exp, args.jobs)
    wall = time.perf_counter() - t0
    write_overlay_csv(rows, out)
    n_cons = sum(r.consistent for r in rows)
    n_deg = sum(r.degenerate for r in rows)
    err.write(
        f"sweep {exp.sweep_parameter}: {len(rows)} points, {n_cons} consistent, "
        f"{len(rows) - n_cons} inconsistent, {n_deg} degenerate\n"
    )
    if args.record:
        record = {
            "config_digest": exp.digest,
            "tool_version": __version__,
            "rows": [
                {"g": r.coupling, "max_offdiag": r.max_offdiag, "entropy": r.entropy,
                 "consistent": r.consistent, "degenerate_flag": r.degenerate}
                for r in rows
            ],
            "wall_time": wall,
        }
        try:
            with open(args.record, "w", encoding="utf-8") as fh:
                json.dump(record, fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise CommandError(EXIT_IO, f"cannot write {args.record}: {exc.strerror}") from None
    return EXIT_OK


def sample_histories(exp: Experiment, n: int) -> list[tuple[int, ...]]:
    """Sequential Born sampling, one uniform draw per measurement time.

    At each time the current (unnormalized) state is propagated, outcome
    ``j`` is the first index whose cumulative probability exceeds the draw,
    and the state is projected onto it.
    """
    sched = Schedule(exp.times, exp.hamiltonian(), exp.prepare_time)
    fams = exp.measurement_families
    rng = SplitMix64(exp.seed)
    out = []
    for _ in range(n):
        v = exp.initial_state.amplitudes
        picks = []
        for step, fam in zip(sched.steps, fams):
            v = step @ v
            branches = [p.entries @ v for p in fam.projectors]
            probs = np.array([np.vdot(b, b).real for b in branches])
            cum = np.cumsum(probs) / probs.sum()
            u = rng.uniform()
            j = int(np.searchsorted(cum, u, side="right"))
            j = min(j, len(cum) - 1)
            while probs[j] == 0.0:
                j -= 1
            picks.append(j)
            v = branches[j]
        out.append(tuple(picks))
    return out


def cmd_sample(args, out, err) -> int:
    if args.n < 1:
        raise CommandError(EXIT_INVALID, "sample: --n must be at least 1")
    exp = load_experiment(args)
    try:
        samples = sample_histories(exp, args.n)
    except ConfigError as exc:
        raise CommandError(EXIT_INVALID, "\n".join(exc.defects)) from None
    w = _writer(out)
    w.writerow(["sample"] + [f"t{k + 1}" for k in range(len(exp.times))])
    for i, picks in enumerate(samples):
        w.writerow([i, *picks])
    return EXIT_OK


def _describe(v) -> str:
    where = f" at t={fmt_float(v.time)}" if getattr(v, "time", None) is not None else ""
    return f"object {v.object!r} in separated cells {v.cells[0]!r}, {v.cells[1]!r}{where}"


def cmd_partition_check(args, out, err) -> int:
    doc = read_json(args.config)
    try:
        domain = domain_from_dict(doc.get("domain", {}))
        if "history" in doc:
            steps = partition_history_from_list(doc["history"])
            partitions = list(steps.steps)
        else:
            steps = None
            partitions = [(None, partition_from_dict(doc["partition"]))]
    except (KeyError, TypeError, ValueError, OrderError, UnknownElement, AttributeError) as exc:
        raise CommandError(EXIT_INVALID, f"malformed partition document: {exc!r}") from None

    ok = True
    for t, p in partitions:
        tag = "" if t is None else f"[t={fmt_float(t)}] "
        pcr = check_pcr(p)
        mer = preserves_mereology(p, domain)
        strong = is_strong_partition(p, domain)
        out.write(f"{tag}check_pcr: {'ok' if not pcr else f'{len(pcr)} violation(s)'}\n")
        for v in pcr:
            out.write(f"  {_describe(v)}\n")
        out.write(f"{tag}preserves_mereology: {'ok' if not mer else f'{len(mer)} violation(s)'}\n")
        for v in mer:
            out.write(f"  part {v.part!r} of {v.whole!r} not located under cell {v.cell!r}\n")
        out.write(f"{tag}is_strong_partition: {fmt_bool(strong)}\n")
        ok = ok and not pcr and not mer and strong
    if steps is not None:
        consistent, _ = history_consistent(steps)
        out.write(f"history_consistent: {fmt_bool(consistent)}\n")
        ok = ok and consistent
    return EXIT_OK if ok else EXIT_INVALID


COMMANDS = {
    "validate": cmd_validate,
    "weights": cmd_weights,
    "consistency": cmd_consistency,
    "sweep": cmd_sweep,
    "partition-check": cmd_partition_check,
    "sample": cmd_sample,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chmereo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config or partition document")
        p.add_argument("--out", default="-", help="output path (default: stdout)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--cap", type=int, default=None)
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="worker threads for sweep points")
            p.add_argument("--record", default=None, help="write a JSON run record here")
        if name == "sample":
            p.add_argument("--n", type=int, default=1, help="number of sampled histories")
    return parser


def run(argv, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; 2 is reserved for caps here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    buf = io.StringIO()
    try:
        code = COMMANDS[args.command](args, buf, stderr)
    except CommandError as exc:
        stderr.write(f"{exc}\n")
        return exc.code
    text = buf.getvalue()
    if args.out == "-":
        stdout.write(text)
    else:
        try:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            stderr.write(f"cannot write {args.out}: {exc.strerror}\n")
            return EXIT_IO
    return code


def main(argv=None) -> int:
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
