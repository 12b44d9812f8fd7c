"""Command-line entry point: ``profgen index|search|daemon|query|bench|matrix``.

Exit codes: 0 ok, 1 usage, 2 input error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("profgen")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class InputError(Exception):
    pass


def _add_search_options(p: argparse.ArgumentParser, with_defaults: bool = True) -> None:
    d = (lambda v: v) if with_defaults else (lambda v: None)
    p.add_argument("--max-seqs", type=int, default=d(1000), help="homologs kept per query (default 1000)")
    p.add_argument("--evalue", type=float, default=d(10.0), help="profile inclusion e-value (default 10)")
    p.add_argument("--min-ungapped-score", type=int, default=d(15))
    p.add_argument("--similar-kmer-threshold", type=int, default=None)
    p.add_argument("--out", dest="outputs", default=d("ascii-pssm"), help="comma list of alignments,pssm,ascii-pssm")
    p.add_argument("--band", type=int, default=None, help="restrict alignment DP to this width around the hit diagonal")
    p.add_argument("--iterations", type=int, default=d(1))
    p.add_argument("--pseudocount-beta", type=float, default=d(10.0))
    p.add_argument("--matrix", default=d("BLOSUM62"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="profgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    index = sub.add_parser("index", help="build a target database index")
    index_sub = index.add_subparsers(dest="index_command", required=True, parser_class=_Parser)
    build = index_sub.add_parser("build")
    build.add_argument("--db", required=True, type=Path)
    build.add_argument("--out", required=True, type=Path)
    build.add_argument("--k", type=int, default=5)

    search = sub.add_parser("search", help="run the full pipeline on a query batch")
    search.add_argument("--index", required=True, type=Path)
    search.add_argument("--queries", required=True, type=Path)
    search.add_argument("--workdir", required=True, type=Path)
    search.add_argument("--workers", type=int, default=None, help="default: $PROFGEN_WORKERS or all cores")
    search.add_argument("--k", type=int, default=None, help="expected index k (checked)")
    search.add_argument("--gap-open", type=int, default=11)
    search.add_argument("--gap-extend", type=int, default=1)
    search.add_argument("--out-alignments", type=Path, default=None, help="write first-stage alignments TSV here")
    search.add_argument("--profiler", choices=("internal", "psiblast"), default="internal")
    search.add_argument("--psiblast-cmd", default=None, help="command template for --profiler psiblast")
    _add_search_options(search)

    daemon = sub.add_parser("daemon", help="serve searches with the index held in memory")
    daemon.add_argument("--index", required=True, type=Path)
    daemon.add_argument("--socket", required=True, type=Path)
    daemon.add_argument("--workers", type=int, default=None)
    daemon.add_argument("--max-frame", type=int, default=None)

    query = sub.add_parser("query", help="send queries to a running daemon")
    query.add_argument("--socket", required=True, type=Path)
    query.add_argument("--queries", type=Path)
    query.add_argument("--out-dir", type=Path, default=Path("."))
    query.add_argument("--shutdown", action="store_true", help="ask the daemon to exit")
    _add_search_options(query, with_defaults=False)

    bench = sub.add_parser("bench", help="runtime scaling measurements")
    bench.add_argument("mode", choices=("scaling", "lengths", "generate"))
    bench.add_argument("--scenario", type=Path, default=None, help="key=value scenario file")
    bench.add_argument("--out", type=Path, default=None, help="CSV output (default stdout)")
    bench.add_argument("--index", type=Path, default=None, help="prebuilt index of the scenario database")
    bench.add_argument("--db-out", type=Path, default=None)
    bench.add_argument("--queries-out", type=Path, default=None)

    matrix = sub.add_parser("matrix", help="inspect substitution matrices")
    matrix.add_argument("name", nargs="?", default="BLOSUM62")
    matrix.add_argument("--list", action="store_true")
    matrix.add_argument("--stats", action="store_true", help="print lambda and background instead of scores")
    return parser


def cmd_index(args) -> int:
    from .index import build_index, save_index

    if not args.db.is_file():
        raise InputError(f"database FASTA {args.db} not found")
    with open(args.db, "rb") as fh:
        db, idx = build_index(fh, args.k)
    save_index(db, idx, args.out)
    print(f"indexed {db.seq_count} sequences, {db.total_residues} residues, {idx.n_postings} {idx.k}-mers -> {args.out}")
    return EXIT_OK


def _search_config(args, **extra):
    from .pipeline import PipelineConfig, default_workers

    return PipelineConfig(
        max_seqs=args.max_seqs,
        inclusion_evalue=args.evalue,
        min_ungapped_score=args.min_ungapped_score,
        similar_kmer_threshold=args.similar_kmer_threshold,
        outputs=args.outputs,
        band_width=args.band,
        iterations=args.iterations,
        beta=args.pseudocount_beta,
        matrix=args.matrix,
        workers=args.workers or default_workers(),
        **extra,
    )


def cmd_search(args) -> int:
    from .pipeline import run_pipeline

    cfg = _search_config(
        args,
        index_dir=args.index,
        query_path=args.queries,
        workdir=args.workdir,
        k=args.k,
        gap_open=args.gap_open,
        gap_extend=args.gap_extend,
        out_alignments=args.out_alignments,
        profiler=args.profiler,
        psiblast_template=args.psiblast_cmd,
    )
    report = run_pipeline(cfg)
    for w in report.warnings:
        log.warning(w)
    print(f"{len(report.queries)} queries profiled in {report.total_ms} ms -> {args.workdir}")
    return EXIT_OK


def cmd_daemon(args) -> int:
    from .daemon import DEFAULT_MAX_FRAME, SearchDaemon
    from .pipeline import PipelineConfig, default_workers

    base = PipelineConfig(index_dir=args.index, workers=args.workers or default_workers())
    daemon = SearchDaemon(args.index, args.socket, args.max_frame or DEFAULT_MAX_FRAME, base)
    daemon.bind()
    print(f"listening on {args.socket}", flush=True)
    daemon.serve_forever()
    return EXIT_OK


def cmd_query(args) -> int:
    from .daemon import daemon_query, daemon_shutdown

    if args.shutdown:
        daemon_shutdown(args.socket)
        return EXIT_OK
    if args.queries is None:
        raise InputError("--queries is required unless --shutdown is given")
    overrides = {
        "max_seqs": args.max_seqs,
        "evalue": args.evalue,
        "min_ungapped_score": args.min_ungapped_score,
        "similar_kmer_threshold": args.similar_kmer_threshold,
        "outputs": args.outputs,
        "band_width": args.band,
        "iterations": args.iterations,
        "beta": args.pseudocount_beta,
        "matrix": args.matrix,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    files = daemon_query(args.socket, args.queries.read_bytes(), overrides)
    for name, content in files.items():
        dest = args.out_dir / name
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(content)
    print(f"wrote {len(files)} files to {args.out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from . import bench
    from .index import index_db, save_index, TargetDB

    scenario = bench.BenchScenario.from_file(args.scenario) if args.scenario else bench.BenchScenario()
    queries, db_records = bench.generate(scenario)
    if args.mode == "generate":
        if not (args.db_out and args.queries_out):
            raise InputError("generate needs --db-out and --queries-out")
        args.db_out.write_bytes(bench.format_fasta(db_records))
        args.queries_out.write_bytes(bench.format_fasta(queries))
        return EXIT_OK
    with tempfile.TemporaryDirectory(prefix="profgen-bench-index-") as tmp:
        index_dir = args.index
        if index_dir is None:
            db = TargetDB.from_records(db_records)
            save_index(db, index_db(db), tmp)
            index_dir = Path(tmp)
        if args.mode == "scaling":
            text = bench.rows_to_csv(bench.run_scaling(scenario, index_dir, queries), bench.SCALING_HEADER)
        else:
            text = bench.rows_to_csv(bench.run_length_sweep(scenario.lengths, index_dir, scenario), bench.LENGTH_HEADER)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .alphabet import BUILTIN_MATRICES, builtin_matrix_text, load_matrix, RESIDUES

    if args.list:
        print("\n".join(BUILTIN_MATRICES))
        return EXIT_OK
    m = load_matrix(args.name)
    if args.stats:
        print(f"name={m.name}\nlambda_u={m.lambda_u:.6f}\nimplicit_background={int(m.implicit_background)}")
        for aa, p in zip(RESIDUES, m.background):
            print(f"background.{aa}={p:.6f}")
    elif args.name.upper() in BUILTIN_MATRICES:
        sys.stdout.write(builtin_matrix_text(args.name))
    else:
        sys.stdout.write(m.to_text())
    return EXIT_OK


COMMANDS = {
    "index": cmd_index,
    "search": cmd_search,
    "daemon": cmd_daemon,
    "query": cmd_query,
    "bench": cmd_bench,
    "matrix": cmd_matrix,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from .daemon import DaemonError
    from .pipeline import PipelineError

    try:
        return COMMANDS[args.command](args)
    except PipelineError as exc:
        print(f"profgen: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.stage in ("index_load", "queries") else EXIT_INTERNAL
    except DaemonError as exc:
        print(f"profgen: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.status == 1 else EXIT_INTERNAL
    except (InputError, ValueError, OSError) as exc:
        print(f"profgen: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"profgen: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
