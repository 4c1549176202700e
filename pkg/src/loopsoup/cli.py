"""Command-line front end: ``loopsoup {exact,soup,tree,gff,verify} GRAPH ...``.

Exit codes: 0 when every identity holds, 1 when some identity fails, 2 for
input errors (unreadable or malformed graph file, invalid form, bad flags).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .energy import DELTA, Current, EnergyForm, InvalidEnergyForm, build_energy, transfer_matrix
from .exact import loop_mass_nontrivial, occupation_laplace_exact, zeta
from .gff import sample_fields
from .loops import sample_soups, write_jsonl
from .paths import UniformStream, transfer_current_inclusion, wilson
from .stats import Estimate
from .verify import SAMPLING_FREE, SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class GraphFileError(ValueError):
    """Malformed graph file; the message names the line or the offending field."""


@dataclass
class GraphFile:
    vertices: list[str]
    edges: list[tuple[str, str, float]]
    kappa: dict[str, float]
    currents: list[tuple[str, str, float]] = field(default_factory=list)

    def energy(self) -> EnergyForm:
        return build_energy(self.vertices, self.edges, self.kappa)

    def current(self, e: EnergyForm) -> Current | None:
        if not self.currents:
            return None
        return Current.from_entries(e, self.currents)

    def to_json(self) -> str:
        """Canonical text: one edge (or current entry) per line."""

        def dumps(obj) -> str:
            return json.dumps(obj, ensure_ascii=False)

        def block(rows) -> str:
            if not rows:
                return "[]"
            return "[\n" + ",\n".join(f"    {dumps(list(r))}" for r in rows) + "\n  ]"

        parts = [f'  "vertices": {dumps(self.vertices)}', f'  "edges": {block(self.edges)}', f'  "kappa": {dumps(self.kappa)}']
        if self.currents:
            parts.append(f'  "currents": {block(self.currents)}')
        return "{\n" + ",\n".join(parts) + "\n}\n"


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise GraphFileError(f"field {where}: expected a number, got {value!r}")
    if not math.isfinite(value):
        raise GraphFileError(f"field {where}: must be finite")
    return float(value)


def _triples(doc: dict, key: str, names: set[str]) -> list[tuple[str, str, float]]:
    raw = doc.get(key, [])
    if not isinstance(raw, list):
        raise GraphFileError(f"field {key}: expected a list of [u, v, value]")
    out = []
    seen = set()
    for k, item in enumerate(raw):
        where = f"{key}[{k}]"
        if not isinstance(item, list) or len(item) != 3:
            raise GraphFileError(f"field {where}: expected [u, v, value]")
        u, v, val = item
        for pos, name in ((0, u), (1, v)):
            if not isinstance(name, str) or name not in names:
                raise GraphFileError(f"field {where}[{pos}]: unknown vertex {name!r}")
        if u == v:
            raise GraphFileError(f"field {where}: self-loop at {u!r}")
        pair = frozenset((u, v))
        if pair in seen:
            raise GraphFileError(f"field {where}: duplicate link ({u}, {v})")
        seen.add(pair)
        out.append((u, v, _number(val, f"{where}[2]")))
    return out


def parse_graph(text: str) -> GraphFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise GraphFileError(f"line {err.lineno}, column {err.colno}: {err.msg}") from None
    if not isinstance(doc, dict):
        raise GraphFileError("line 1: top level must be an object")
    unknown = set(doc) - {"vertices", "edges", "kappa", "currents"}
    if unknown:
        raise GraphFileError(f"field {sorted(unknown)[0]}: unknown field")
    vertices = doc.get("vertices")
    if not isinstance(vertices, list) or not vertices or not all(isinstance(v, str) for v in vertices):
        raise GraphFileError("field vertices: expected a nonempty list of names")
    if len(set(vertices)) != len(vertices):
        raise GraphFileError("field vertices: duplicate name")
    if DELTA in vertices:
        raise GraphFileError(f"field vertices: {DELTA!r} is reserved for the cemetery")
    names = set(vertices)
    edges = _triples(doc, "edges", names)
    kappa_raw = doc.get("kappa", {})
    if not isinstance(kappa_raw, dict):
        raise GraphFileError("field kappa: expected an object name -> rate")
    kappa = {}
    for v, k in kappa_raw.items():
        if v not in names:
            raise GraphFileError(f"field kappa.{v}: unknown vertex")
        kappa[v] = _number(k, f"kappa.{v}")
    currents = _triples(doc, "currents", names)
    return GraphFile(list(vertices), edges, kappa, currents)


def load_graph(path: str | Path) -> tuple[EnergyForm, Current | None]:
    """Read a graph file; every failure is a :class:`GraphFileError` prefixed by the path."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise GraphFileError(f"{path}: cannot read ({err.strerror})") from None
    try:
        gf = parse_graph(text)
        e = gf.energy()
        return e, gf.current(e)
    except GraphFileError as err:
        raise GraphFileError(f"{path}: {err}") from None
    except (InvalidEnergyForm, ValueError) as err:
        raise GraphFileError(f"{path}: {err}") from None


def graph_file(e: EnergyForm, current: Current | None = None) -> GraphFile:
    edges = [(e.vertices[i], e.vertices[j], float(e.conductance[i, j])) for i, j in e.links(with_cemetery=False)]
    kappa = {v: float(k) for v, k in zip(e.vertices, e.killing)}
    currents = []
    if current is not None:
        w = current.inner
        currents = [(e.vertices[i], e.vertices[j], float(w[i, j])) for i, j in e.links(with_cemetery=False) if w[i, j] != 0]
    return GraphFile(list(e.vertices), edges, kappa, currents)


def dump_graph(e: EnergyForm, current: Current | None = None) -> str:
    return graph_file(e, current).to_json()


# -- subcommands -----------------------------------------------------------------


def _table(names: Sequence[str], cols: Sequence[str], M: np.ndarray) -> str:
    width = max(10, max(len(c) for c in cols) + 1)
    head = " " * width + "".join(f" {c:>{width}}" for c in cols)
    lines = [head]
    for r, row in zip(names, M):
        lines.append(f"{r:>{width}}" + "".join(f" {v:>{width}.7f}" for v in row))
    return "\n".join(lines)


def _parse_chi(e: EnergyForm, items: list[str] | None) -> np.ndarray | None:
    if not items:
        return None
    chi = np.zeros(e.n)
    for item in items:
        name, sep, val = item.partition("=")
        if not sep or name not in e.index or name == DELTA:
            raise GraphFileError(f"--chi {item!r}: expected VERTEX=VALUE with a known vertex")
        try:
            chi[e.idx(name)] = float(val)
        except ValueError:
            raise GraphFileError(f"--chi {item!r}: value is not a number") from None
    if np.any(chi < 0):
        raise GraphFileError("--chi values must be nonnegative")
    return chi


def cmd_exact(args, e: EnergyForm, out) -> int:
    G = e.green_matrix
    print(f"vertices: {' '.join(e.vertices)}", file=out)
    print(f"Z_e = {zeta(e):.7g}", file=out)
    print(f"nontrivial loop mass = {loop_mass_nontrivial(e):.7f}", file=out)
    print("Green function G:", file=out)
    print(_table(e.vertices, e.vertices, G), file=out)
    for i, v in enumerate(e.vertices):
        print(f"G^{{{v},{v}}} = {G[i, i]:.7f}", file=out)
    tm = transfer_matrix(e)
    labels = [f"{a}>{b}" for a, b in (e.link_name(l) for l in tm.links)]
    print("Transfer matrix K:", file=out)
    print(_table(labels, labels, tm.matrix), file=out)
    for l, lab in zip(tm.links, labels):
        print(f"P({lab} in tree) = {transfer_current_inclusion(e, [e.link_name(l)]):.7f}", file=out)
    chi = _parse_chi(e, args.chi)
    if chi is not None:
        print(f"E exp(-<L_{args.alpha:g}, chi>) = {occupation_laplace_exact(e, chi, args.alpha):.7f}", file=out)
    report = run_suite(e, "exact-only", tol=args.tol)
    print("identities:", file=out)
    for r in report.rows:
        print(f"  {'PASS' if r.passed else 'FAIL'}  {r.name:<45} err={r.statistic:.2e}  {r.identity}", file=out)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_soup(args, e: EnergyForm, out) -> int:
    rng = np.random.default_rng(args.seed)
    b = sample_soups(e, args.alpha, args.samples, rng)
    occ = b.occupation()
    G = e.green_matrix
    summary = {
        "alpha": args.alpha,
        "samples": args.samples,
        "seed": args.seed,
        "truncation_tail": b.tail,
        "loop_count": _est(b.loop_counts(), args.alpha * loop_mass_nontrivial(e)),
        "occupation": {v: _est(occ[:, i], args.alpha * G[i, i]) for i, v in enumerate(e.vertices)},
    }
    print(json.dumps(summary, indent=2, ensure_ascii=False), file=out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_jsonl(b, fh)
    return EXIT_OK


def cmd_tree(args, e: EnergyForm, out) -> int:
    stream = UniformStream(np.random.default_rng(args.seed))
    samples = [wilson(e, stream) for _ in range(args.samples)]
    names = e.vertices + (DELTA,)
    inclusion = {}
    for l in e.links():
        a, b = l
        freq = np.array([t.contains(a, b) for t, _ in samples], dtype=float)
        inclusion[f"{names[a]}-{names[b]}"] = _est(freq, transfer_current_inclusion(e, [e.link_name(l)]))
    print(json.dumps({"samples": args.samples, "seed": args.seed, "inclusion": inclusion}, indent=2, ensure_ascii=False), file=out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": "loopsoup-trees", "version": 1, "vertices": list(e.vertices)}, ensure_ascii=False) + "\n")
            for t, erased in samples:
                rec = {
                    "tree": t.parent_map(e),
                    "erased": [{"cycle": [names[s] for s in l.cycle], "holdings": list(l.holding)} for l in erased],
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return EXIT_OK


def cmd_gff(args, e: EnergyForm, out) -> int:
    phi = sample_fields(e, args.samples, np.random.default_rng(args.seed))
    G = e.green_matrix
    V = e.vertices
    moments = {
        "samples": args.samples,
        "seed": args.seed,
        "mean_real": {v: _est(phi[:, i].real, 0.0) for i, v in enumerate(V)},
        "covariance": {f"{V[i]},{V[j]}": _est((phi[:, i] * np.conj(phi[:, j])).real, 2 * G[i, j]) for i in range(e.n) for j in range(i, e.n)},
        "half_square_mean": {v: _est(0.5 * np.abs(phi[:, i]) ** 2, G[i, i]) for i, v in enumerate(V)},
    }
    print(json.dumps(moments, indent=2, ensure_ascii=False), file=out)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"vertices": list(V), "fields": [[[z.real, z.imag] for z in row] for row in phi]}, fh, ensure_ascii=False)
            fh.write("\n")
    return EXIT_OK


def cmd_verify(args, e: EnergyForm, out) -> int:
    if args.seed is None and args.suite not in SAMPLING_FREE:
        raise GraphFileError(f"--seed is required for suite {args.suite!r}")
    report = run_suite(e, args.suite, args.samples, args.seed, args.tol, timings=args.timings)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = outdir / f"{args.suite}-report"
    stem.with_suffix(".json").write_text(report.to_json(args.timings), encoding="utf-8")
    stem.with_suffix(".csv").write_text(report.to_csv(args.timings), encoding="utf-8")
    for r in report.rows:
        if not r.passed or args.verbose:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<50} {r.kind:<5} stat={r.statistic:.3g}", file=out)
    n_fail = len(report.failures)
    print(f"{args.suite}: {len(report.rows) - n_fail}/{len(report.rows)} passed; report in {stem}.json", file=out)
    return EXIT_OK if report.passed else EXIT_FAIL


def _est(samples, exact: float) -> dict:
    est = Estimate.from_samples(samples)
    return {"mean": est.mean, "stderr": est.stderr, "exact": float(exact), "z": est.z(exact) if est.stderr > 0 else 0.0}


# -- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise GraphFileError(f"{self.prog}: {message}")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 2:
        raise argparse.ArgumentTypeError("must be at least 2")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loopsoup", description="Markov loop soups, spanning trees and Gaussian fields on finite graphs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("exact", help="print G, K, Z_e and the exact identity table")
    s.add_argument("graph")
    s.add_argument("--chi", action="append", metavar="VERTEX=VALUE", help="mass for the occupation Laplace transform (repeatable)")
    s.add_argument("--alpha", type=_positive_float, default=1.0)
    s.add_argument("--tol", type=_positive_float, default=1e-10)
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("soup", help="sample loop soups")
    s.add_argument("graph")
    s.add_argument("--alpha", type=_positive_float, default=1.0)
    s.add_argument("--samples", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", help="write ensembles as JSON lines")
    s.set_defaults(func=cmd_soup)

    s = sub.add_parser("tree", help="sample spanning trees with Wilson's algorithm")
    s.add_argument("graph")
    s.add_argument("--samples", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", help="write trees and erased loops as JSON lines")
    s.set_defaults(func=cmd_tree)

    s = sub.add_parser("gff", help="sample the Gaussian free field")
    s.add_argument("graph")
    s.add_argument("--samples", type=_positive_int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", help="write field samples as JSON")
    s.set_defaults(func=cmd_gff)

    s = sub.add_parser("verify", help="run an identity suite and write JSON and CSV reports")
    s.add_argument("graph")
    s.add_argument("--suite", choices=sorted(SUITES), default="exact-only")
    s.add_argument("--samples", type=_positive_int, default=20000)
    s.add_argument("--seed", type=int)
    s.add_argument("--tol", type=_positive_float, default=1e-10)
    s.add_argument("--out-dir", default="reports")
    s.add_argument("--timings", action="store_true", help="include per-check runtimes (reports are then not reproducible)")
    s.add_argument("-v", "--verbose", action="store_true", help="print every row")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        e, _ = load_graph(args.graph)
        return args.func(args, e, out)
    except GraphFileError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)


run = main


def entry() -> None:
    sys.exit(main())
