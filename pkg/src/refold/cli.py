"""``refold`` command-line front end.

Every subcommand that writes files also writes a run manifest next to its
output recording argv, input digests and the tool version, so the run can be
replayed with ``refold replay``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dagostini import DagostiniConfig, dagostini_unfold
from .disttest import KINDS, DistanceSpec
from .errors import FormatError, InsufficientPosteriorError, RefoldError
from .evaluation import bottom_line_table, ensemble_bias
from .histogram import Histogram
from .response import ResponseMatrix, build_response, condition_number, load_bundle
from .scenarios import BUILTIN, generate, get_scenario
from .unfolder import SearchConfig, flat_start, unfold, unfold_abc

log = logging.getLogger("refold")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
TRACE_FLUSH_EVERY = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str | None, flag: str) -> Path:
    if path is None:
        raise UsageError(f"missing required input {flag}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {path}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _hist_dict(h: Histogram) -> dict:
    return {"edges": h.edges.tolist(), "counts": h.counts.tolist(), "errors": h.errors.tolist()}


class TraceWriter:
    """Streams ``iteration,ts_per_ndof`` rows, flushing every 1000 rows."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(["iteration", "ts_per_ndof"])
        self._n = 0

    def __call__(self, iteration: int, score: float) -> None:
        self._w.writerow([iteration, repr(score)])
        self._n += 1
        if self._n % TRACE_FLUSH_EVERY == 0:
            self._fh.flush()

    def close(self) -> None:
        self._fh.close()


# -- subcommands -------------------------------------------------------------
# Each returns (inputs, outputs, manifest_path) for the manifest writer.


def cmd_scenario(args):
    spec = replace(get_scenario(args.name, seed=args.seed), systematic_mode=args.systematic_mode)
    sc = generate(spec)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "truth.csv": sc.truth,
        "reco.csv": sc.reco,
        "alt_truth.csv": sc.alt_truth,
        "alt_data.csv": sc.alt_data,
    }
    for name, h in files.items():
        h.to_csv(out / name)
    sc.response.nominal.to_json(out / "resp.json")
    sc.response.up.to_json(out / "resp_up.json")
    sc.response.down.to_json(out / "resp_down.json")
    outputs = [out / n for n in (*files, "resp.json", "resp_up.json", "resp_down.json")]
    return [], outputs, out / "manifest.json"


def _read_pairs(path: Path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if data.shape[1] != 2:
        raise FormatError(f"{path}: expected columns truth,reco")
    return data[:, 0], data[:, 1]


def _edges(values, n, rng):
    lo, hi = rng if rng else (float(values.min()), float(values.max()))
    if rng is None:
        hi = np.nextafter(hi, np.inf)
    return np.linspace(lo, hi, n + 1)


def cmd_build_response(args):
    pairs = _require(args.pairs, "--pairs")
    t, r = _read_pairs(pairs)
    R = build_response(
        t, r, _edges(t, args.gen_bins, args.gen_range), _edges(r, args.reco_bins, args.reco_range),
        unit_efficiency=args.unit_efficiency,
    )
    out = Path(args.out)
    R.to_json(out)
    return [pairs], [out], None


def _search_config(args, start_kind: str) -> SearchConfig:
    return SearchConfig(
        max_samples=args.max_samples,
        stop_ts_low=args.stop_ts_low,
        early_stop_window=args.early_stop_window,
        accept_floor=args.accept_floor,
        use_accept_floor=args.use_accept_floor,
        start=start_kind,
        distance=DistanceSpec(args.test, args.kl_epsilon),
        seed=args.seed,
    )


def _start_hist(args, inputs):
    if args.start == "custom":
        p = _require(args.start_file, "--start-file")
        inputs.append(p)
        return Histogram.from_csv(p)
    p = _require(args.truth, "--truth")
    inputs.append(p)
    truth = Histogram.from_csv(p)
    return truth if args.start == "truth" else flat_start(truth)


def cmd_unfold(args):
    data_p = _require(args.data, "--data")
    resp_p = _require(args.response, "--response")
    inputs = [data_p, resp_p]
    start = _start_hist(args, inputs)
    data = Histogram.from_csv(data_p)
    R = ResponseMatrix.from_json(resp_p)
    cfg = _search_config(args, args.start)
    out = Path(args.out)
    outputs = [out]
    writer = None
    if args.trace:
        writer = TraceWriter(Path(args.trace))
        outputs.append(Path(args.trace))
    try:
        run = unfold(start, data, R, cfg, on_accept=writer)
    finally:
        if writer:
            writer.close()
    _write_json(out, run.to_dict())
    print(f"{run.stop_reason}: ts/ndof {run.best_ts.ts_per_ndof:.6g} after {run.iterations_used} iterations")
    return inputs, outputs, None


def cmd_unfold_abc(args):
    data_p = _require(args.data, "--data")
    resp_p = _require(args.response, "--response")
    inputs = [data_p, resp_p]
    up = _require(args.response_up, "--response-up") if args.response_up else None
    down = _require(args.response_down, "--response-down") if args.response_down else None
    inputs += [p for p in (up, down) if p]
    start = _start_hist(args, inputs)
    data = Histogram.from_csv(data_p)
    bundle = load_bundle(resp_p, up, down)
    cfg = _search_config(args, args.start)
    out = Path(args.out)
    try:
        bands = unfold_abc(start, data, bundle, cfg, n_keep=args.n_keep)
        status = "ok"
    except InsufficientPosteriorError as exc:
        if not hasattr(exc.partial, "central"):
            raise
        bands, status = exc.partial, f"insufficient: {exc}"
    _write_json(out, {
        "status": status,
        "central": _hist_dict(bands.central),
        "low": _hist_dict(bands.low),
        "high": _hist_dict(bands.high),
        "quantiles": list(bands.quantiles),
        "accepted_count": bands.accepted_count,
        "best_run": bands.run.to_dict() if bands.run else None,
    })
    print(f"{bands.accepted_count} accepted candidates ({status})")
    return inputs, [out], None


def cmd_dagostini(args):
    data_p = _require(args.data, "--data")
    resp_p = _require(args.response, "--response")
    inputs = [data_p, resp_p]
    prior = None
    if args.prior == "truth":
        p = _require(args.truth, "--truth")
        inputs.append(p)
        prior = Histogram.from_csv(p)
    res = dagostini_unfold(
        Histogram.from_csv(data_p),
        ResponseMatrix.from_json(resp_p),
        DagostiniConfig(max_iterations=args.max_iterations, convergence_tol=args.tol, prior=prior),
    )
    out = Path(args.out)
    res.unfolded.to_csv(out)
    print(f"{'converged' if res.converged else 'not converged'} after {res.iterations} iterations")
    return inputs, [out], None


def cmd_bottom_line(args):
    table = bottom_line_table(
        names=args.scenario,
        seed=args.seed,
        dag_cfg=DagostiniConfig(max_iterations=args.max_iterations, convergence_tol=args.tol),
        max_samples=args.max_samples,
        threads=args.threads,
    )
    out = Path(args.out)
    _write_json(out, table.to_dict())
    print(table.format())
    return [], [out], None


def cmd_ensemble(args):
    spec = get_scenario(args.scenario, seed=args.seed)
    res = ensemble_bias(
        spec,
        args.toys,
        method=args.method,
        search_cfg=SearchConfig(max_samples=args.max_samples, start=args.start),
        dag_cfg=DagostiniConfig(max_iterations=args.max_iterations, convergence_tol=args.tol),
        dag_prior=args.prior,
        threads=args.threads,
    )
    out = Path(args.out)
    edges = spec.gen_edges
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "mean", "std", "median_abs"])
        std = res.std if res.std is not None else [None] * len(res.mean)
        for lo, hi, m, s, med in zip(edges[:-1], edges[1:], res.mean, std, res.median_abs):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m)), "" if s is None else repr(float(s)), repr(float(med))])
    print(f"{len(res.deviations)} toys ok, {res.n_failed} failed")
    return [], [out], None


def cmd_cond(args):
    p = _require(args.response, "--response")
    c = condition_number(ResponseMatrix.from_json(p))
    print(c)
    if args.out:
        out = Path(args.out)
        _write_json(out, {"condition_number": c if np.isfinite(c) else "inf"})
        return [p], [out], None
    return [p], [], False


def cmd_replay(args):
    mpath = _require(args.manifest, "manifest")
    m = json.loads(mpath.read_text())
    for path, digest in m["inputs"].items():
        if not Path(path).is_file() or sha256(path) != digest:
            raise UsageError(f"input {path} is missing or differs from the manifest digest")
    argv = list(m["argv"])
    if args.out is not None:
        for flag in ("--out", "--outdir"):
            if flag in argv:
                argv[argv.index(flag) + 1] = args.out
        if "--trace" in argv:
            argv[argv.index("--trace") + 1] = str(Path(args.out).with_suffix(".trace.csv"))
    return main(argv)


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    search = _Parser(add_help=False)
    search.add_argument("--data", required=True)
    search.add_argument("--response", required=True)
    search.add_argument("--start", choices=("truth", "flat", "custom"), default="truth")
    search.add_argument("--truth")
    search.add_argument("--start-file")
    search.add_argument("--test", choices=KINDS, default="pearson")
    search.add_argument("--kl-epsilon", type=float, default=1e-9)
    search.add_argument("--max-samples", type=int, default=100_000)
    search.add_argument("--stop-ts-low", type=float, default=0.9)
    search.add_argument("--early-stop-window", type=float, default=0.01)
    search.add_argument("--accept-floor", type=float, default=1.0)
    search.add_argument("--use-accept-floor", action="store_true")

    dag = _Parser(add_help=False)
    dag.add_argument("--tol", type=float, default=1e-4)
    dag.add_argument("--max-iterations", type=int, default=10_000)

    p = _Parser(prog="refold", description="Unfolding by folding.")
    p.add_argument("--version", action="version", version=f"refold {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("scenario", parents=[common], help="generate a built-in scenario")
    s.add_argument("--name", required=True, choices=tuple(BUILTIN))
    s.add_argument("--outdir", required=True)
    s.add_argument("--systematic-mode", choices=("weight", "scale"), default="weight")
    s.set_defaults(func=cmd_scenario)

    s = sub.add_parser("build-response", parents=[common], help="response matrix from truth,reco pairs")
    s.add_argument("--pairs")
    s.add_argument("--gen-bins", type=int, required=True)
    s.add_argument("--reco-bins", type=int, required=True)
    s.add_argument("--gen-range", type=float, nargs=2)
    s.add_argument("--reco-range", type=float, nargs=2)
    s.add_argument("--unit-efficiency", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_response)

    s = sub.add_parser("unfold", parents=[common, search], help="stochastic search with a fixed response")
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.set_defaults(func=cmd_unfold)

    s = sub.add_parser("unfold-abc", parents=[common, search], help="search with nuisance-sampled response")
    s.add_argument("--response-up")
    s.add_argument("--response-down")
    s.add_argument("--n-keep", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_unfold_abc)

    s = sub.add_parser("dagostini", parents=[common, dag], help="iterative Bayesian baseline")
    s.add_argument("--data", required=True)
    s.add_argument("--response", required=True)
    s.add_argument("--prior", choices=("truth", "flat"), default="truth")
    s.add_argument("--truth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dagostini)

    s = sub.add_parser("bottom-line", parents=[common, dag], help="bottom-line table")
    s.add_argument("--scenario", nargs="+", default=["s1", "s2", "s3"], choices=tuple(BUILTIN))
    s.add_argument("--max-samples", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bottom_line)

    s = sub.add_parser("ensemble", parents=[common, dag], help="toy ensemble bias study")
    s.add_argument("--scenario", required=True, choices=tuple(BUILTIN))
    s.add_argument("--toys", type=int, default=20)
    s.add_argument("--method", choices=("algo1", "dagostini"), default="algo1")
    s.add_argument("--start", choices=("truth", "flat"), default="truth")
    s.add_argument("--prior", choices=("truth", "flat"), default="truth")
    s.add_argument("--max-samples", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("cond", parents=[common], help="print the condition number of a response")
    s.add_argument("--response")
    s.add_argument("--out")
    s.set_defaults(func=cmd_cond)

    s = sub.add_parser("replay", help="rerun a command from its manifest")
    s.add_argument("manifest")
    s.add_argument("--out", help="redirect the primary output (file or directory)")
    s.set_defaults(func=cmd_replay)
    return p


def _write_manifest(path: Path, args, argv, inputs, outputs, runtime):
    _write_json(path, {
        "subcommand": args.command,
        "argv": argv,
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "version": __version__,
        "runtime_s": runtime,
    })


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(
        level=os.environ.get("REFOLD_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        t0 = time.perf_counter()
        result = args.func(args)
        if args.command == "replay":
            return result
        inputs, outputs, manifest = result
        if manifest is False or not outputs:
            return EXIT_OK
        if manifest is None:
            manifest = Path(str(outputs[0]) + ".manifest.json")
        _write_manifest(manifest, args, argv, inputs, outputs, time.perf_counter() - t0)
        return EXIT_OK
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"refold: format error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RefoldError, OSError) as exc:
        print(f"refold: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
