"""Command-line front end.

    uqft expand --n N [--format abbrev|json]
    uqft run CONFIG [--output DIR]
    uqft cache {clear,stat} [--dir DIR]

Exit codes: 0 success, 1 numerical failure (a quadrature did not converge),
2 configuration or usage error.  A config error writes no files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cache import TransformCache
from .combinatorics import SYMMETRIZER_CAP, CapExceeded
from .config import ConfigError, RunConfig, load
from .gram import GRAM_QUAD, cluster_scan, eval_pairing, free_field_oracle, gram_matrix
from .kernel import assemble_W, render_W
from .quad import ConvergenceError
from .scatter import ScatterKinematics, convergence_scan, scan_csv

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2

MANIFEST_SCHEMA = "uqft.manifest/1"
CLUSTER_COLUMNS = ("rho", "value_re", "value_im", "deviation", "err")
FREEFIELD_COLUMNS = ("f", "g", "pairing_re", "pairing_im", "oracle_re", "oracle_im", "rel_diff", "ok")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- expand ----------------------------------------------------------------

def cmd_expand(n: int, fmt: str = "abbrev") -> str:
    if n < 0:
        raise CapExceeded("n must be nonnegative")
    if n > SYMMETRIZER_CAP:
        raise CapExceeded(f"n = {n} exceeds the symmetrizer cap {SYMMETRIZER_CAP}")
    tl = assemble_W(n)
    return render_W(tl) if fmt == "abbrev" else tl.to_json()


# -- run suites --------------------------------------------------------------
# each returns {filename: text} plus a summary dict

def _suite_gram(cfg: RunConfig):
    seqs = cfg.build_sequences()
    block = cfg.gram
    rep = gram_matrix([seqs[b] for b in block["basis"]], cfg.measure(), cfg.quad_config(**_gram_defaults()), tol=block["tol"])
    files = {"gram.json": rep.to_json() + "\n", "gram_eigenvalues.csv": rep.eigen_csv()}
    return files, {"psd": rep.psd, "min_eig": rep.min_eig, "max_eig": rep.max_eig}


def _gram_defaults() -> dict:
    return {"allow_truncation": GRAM_QUAD.allow_truncation}


def _suite_scatter(cfg: RunConfig):
    block = cfg.scatter
    kin = ScatterKinematics(tuple(map(tuple, block["in"])), tuple(map(tuple, block["out"])), cfg.mass)
    rows = convergence_scan(kin, block["widths"], cfg.measure(), cfg.quad_config(p_sigmas=4.0), block["tau"])
    ratios = [abs(r.ratio) for r in rows]
    return {"scatter_scan.csv": scan_csv(rows)}, {"ratio_abs": ratios}


def _suite_cluster(cfg: RunConfig):
    seqs = cfg.build_sequences()
    block = cfg.cluster
    pts = cluster_scan(seqs[block["f"]], seqs[block["g"]], block["direction"], block["rhos"], cfg.measure(),
                       cfg.quad_config(**_gram_defaults()))
    rows = [[repr(p.rho), repr(p.value.real), repr(p.value.imag), repr(p.deviation), repr(p.error)] for p in pts]
    return {"cluster_scan.csv": _csv(CLUSTER_COLUMNS, rows)}, {"deviations": [p.deviation for p in pts]}


def _suite_freefield(cfg: RunConfig):
    seqs = cfg.build_sequences()
    block = cfg.freefield
    qc = cfg.quad_config(**_gram_defaults())
    rows = []
    worst = 0.0
    for a, b in block["pairs"]:
        got = eval_pairing(seqs[a], seqs[b], cfg.measure(), qc)
        ref = free_field_oracle(seqs[a], seqs[b], qc)
        rel = abs(got - ref) / max(abs(ref), 1e-300) if got != ref else 0.0
        worst = max(worst, rel)
        rows.append([a, b, repr(got.real), repr(got.imag), repr(ref.real), repr(ref.imag), repr(rel), str(rel <= block["rtol"]).lower()])
    summary = {"max_rel_diff": worst, "free": cfg.measure().is_free}
    return {"freefield.csv": _csv(FREEFIELD_COLUMNS, rows)}, summary


SUITE_RUNNERS = {
    "gram": _suite_gram,
    "scatter": _suite_scatter,
    "cluster": _suite_cluster,
    "freefield": _suite_freefield,
}


def _versions() -> dict:
    return {"uqft": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _write(directory: Path, files: dict) -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (directory / name).write_text(text)
    return sorted(files)


def cmd_run(config_path: str | Path, output: str | Path | None = None, stream=None) -> int:
    stream = sys.stderr if stream is None else stream
    try:
        cfg = load(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=stream)
        return EXIT_CONFIG
    outdir = Path(output) if output is not None else Path(cfg.output_dir)

    manifest = {
        "schema": MANIFEST_SCHEMA,
        "suite": cfg.suite,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "cache_dir": cfg.cache_dir,
        "versions": _versions(),
        "status": "ok",
        "partial": False,
        "outputs": [],
    }
    start = time.perf_counter()
    code = EXIT_OK
    try:
        files, summary = SUITE_RUNNERS[cfg.suite](cfg)
        manifest["summary"] = summary
    except ConvergenceError as exc:
        files = {}
        manifest.update(status="unconverged", partial=True, message=str(exc))
        print(f"numerical failure: {exc}", file=stream)
        code = EXIT_NUMERICAL
    manifest["timings"] = {"total_seconds": time.perf_counter() - start}
    manifest["outputs"] = _write(outdir, files)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return code


# -- cache ---------------------------------------------------------------------

def cmd_cache(action: str, directory: str | None = None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    cache = TransformCache(Path(directory)) if directory else TransformCache.from_env()
    if action == "stat":
        print(json.dumps(cache.stat(), indent=2), file=stream)
    else:
        removed = cache.clear()
        print(f"removed {removed} entries from {cache.directory}", file=stream)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uqft", description="Wightman-functional kernels, Gram checks and scattering scans.")
    p.add_argument("--version", action="version", version=f"uqft {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ex = sub.add_parser("expand", help="print the symmetrized kernel W_n")
    ex.add_argument("--n", type=int, required=True)
    ex.add_argument("--format", choices=("abbrev", "json"), default="abbrev")

    run = sub.add_parser("run", help="execute a TOML run configuration")
    run.add_argument("config")
    run.add_argument("--output", default=None, help="override output.directory")

    ca = sub.add_parser("cache", help="inspect or clear the shell-transform cache")
    ca.add_argument("action", choices=("clear", "stat"))
    ca.add_argument("--dir", default=None, help="cache directory (default: $UQFT_CACHE_DIR or ~/.cache/uqft)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "expand":
        try:
            print(cmd_expand(args.n, args.format))
        except CapExceeded as exc:
            print(f"cap exceeded: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    if args.command == "run":
        return cmd_run(args.config, args.output)
    return cmd_cache(args.action, args.dir)


if __name__ == "__main__":
    sys.exit(main())
