"""Command-line entry point: ``sta-kit <matrix|shift|blobs|delannoy|sinkhorn>``.

Exit codes: 0 success, 1 a reported check failed, 2 usage error, 3 domain
error, 4 convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import blobs, delannoy, sta, timeshift, uot
from .errors import ConvergenceWarning, StaError

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DOMAIN, EXIT_CONVERGENCE = 0, 1, 2, 3, 4

logger = logging.getLogger("sta_kit")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return h, w


def _regions(text: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    parts = text.split(";")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("regions need two ';'-separated lists of vertex indices")
    try:
        return tuple(tuple(int(v) for v in p.split(",") if v.strip()) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad region spec {text!r}")


def _write_csv(path, header, rows) -> None:
    out = sys.stdout if str(path) == "-" else open(path, "w", newline="")
    try:
        wr = csv.writer(out, lineterminator="\n")
        if header:
            wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if out is not sys.stdout:
            out.close()


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _add_uot_flags(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--epsilon", type=float, default=None, help="entropy (default 10 / p)")
    ap.add_argument("--gamma", type=float, default=1.0, help="marginal relaxation")
    ap.add_argument("--tol", type=float, default=1e-9)
    ap.add_argument("--max-iter", type=int, default=5000)
    ap.add_argument("--no-normalize", action="store_true", help="skip median normalization of M")


def _kernel(geom: uot.GroundGeometry, args, normalize: bool = True):
    if normalize and not args.no_normalize and geom.p > 1:
        geom = uot.normalize_by_median(geom)
    eps = args.epsilon if args.epsilon is not None else 10.0 / geom.p
    params = uot.UotParams(eps, args.gamma, max_iter=args.max_iter, tol=args.tol)
    return uot.gibbs_kernel(geom, eps, params.stab_threshold), params


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_matrix(args) -> int:
    man = blobs.read_manifest(args.manifest)
    signed = args.signed if args.signed is not None else man.signed
    t0 = time.perf_counter()
    if args.cost == "sinkhorn":
        kernel, params = _kernel(man.geometry, args, man.normalize)
        cost = sta.CostProvider.sinkhorn(kernel, params)
    else:
        cost = sta.CostProvider.sqeuclidean()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        dm = sta.pairwise_matrix(man.series, args.beta, cost, signed=signed, n_jobs=args.threads, labels=man.labels)
    meta = dict(dm.metadata)
    meta.update(manifest=str(args.manifest), normalize=man.normalize, geometry_p=man.geometry.p)
    meta["wall_time_s"] = time.perf_counter() - t0
    rows = ([lab, *row] for lab, row in zip(dm.labels, dm.values))
    _write_csv(args.out, ["label", *dm.labels], rows)
    meta_path = args.meta or (None if args.out == "-" else f"{args.out}.json")
    if meta_path:
        _write_json(meta_path, meta)
    unconverged = meta.get("sinkhorn", {}).get("unconverged", 0)
    return EXIT_CONVERGENCE if unconverged else EXIT_OK


def cmd_shift(args) -> int:
    if args.values:
        x = timeshift.pulse(args.T, args.start, args.values, args.baseline)
    else:
        x = timeshift.centered_pulse(args.T, args.width, args.amplitude)
    k_max = args.k_max if args.k_max is not None else timeshift.profile(x).max_shift
    rows = timeshift.shift_gap_experiment(x, args.betas, k_max)
    _write_csv(args.out, timeshift.EXPERIMENT_HEADER, (r.astuple() for r in rows))
    return EXIT_OK


def cmd_blobs(args) -> int:
    h, w = args.grid
    cfg = blobs.BlobConfig(
        h=h,
        w=w,
        T=args.T,
        regions=args.regions,
        t1=args.t1,
        t2=args.t2,
        n_per_group=args.n,
        amp_low=args.amp_low,
        amp_high=args.amp_high,
        sigma_time=args.sigma_time,
        sigma_space=args.sigma_space,
        seed=args.seed,
    )
    path = blobs.write_dataset(blobs.generate_blobs(cfg), args.out_dir)
    print(path)
    return EXIT_OK


DELANNOY_HEADER = ("m", "k", "D_m_mk", "phi", "psi", "slack_A", "slack_B", "slack_lemma")


def cmd_delannoy(args) -> int:
    rows = delannoy.sweep(args.m_max, args.k_max)
    _write_csv(
        args.out,
        DELANNOY_HEADER,
        ((r.m, r.k, r.d_m_mk, r.phi, r.psi, r.slack_a, r.slack_b, r.slack_lemma) for r in rows),
    )
    if args.table:
        n = args.m_max + args.k_max
        tab = delannoy.delannoy_table(n, n)
        _write_csv(args.table, ["m", *range(1, n + 1)], ([m, *(tab[m, j] for j in range(1, n + 1))] for m in range(1, n + 1)))
    failures = [r for r in rows if not r.ok]
    for r in failures:
        print(f"inequality failure at m={r.m}, k={r.k}", file=sys.stderr)
    return EXIT_CHECK if failures else EXIT_OK


def _read_vector(path) -> np.ndarray:
    a = blobs.read_series_csv(Path(path))
    if min(a.shape) != 1:
        raise uot.DomainError(f"{path} must hold a single row or column")
    return a.ravel()


def cmd_sinkhorn(args) -> int:
    x, y = _read_vector(args.x), _read_vector(args.y)
    if x.size != y.size:
        raise uot.DomainError(f"x has {x.size} bins, y has {y.size}")
    if args.graph:
        geom = uot.ground_metric_graph(blobs.read_edges_csv(Path(args.graph)), x.size)
    else:
        h, w = args.grid or (1, x.size)
        geom = uot.ground_metric_grid(h, w, args.exponent)
    if geom.p != x.size:
        raise uot.DomainError(f"geometry has p={geom.p}, vectors have {x.size} bins")
    kernel, params = _kernel(geom, args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        state, summary = uot.sinkhorn_unbalanced(x, y, kernel, params, plan=True)
        rep = uot.divergence_report(x, y, kernel, params)
    report = {
        "epsilon": params.epsilon,
        "gamma": params.gamma,
        "W": summary.w_value,
        "W_primal": uot.primal_value(x, y, summary.plan, kernel, params),
        "S": rep.s_value,
        "S_dual": rep.s_dual,
        "mass": summary.mass,
        "mass_xx": rep.mass_xx,
        "mass_yy": rep.mass_yy,
        "iterations": state.iterations,
        "residual": state.residual,
        "converged": state.converged,
    }
    _write_json(args.out, report)
    if args.plan:
        _write_csv(args.plan, None, summary.plan)
    ok = state.converged and rep.state_xx.converged and rep.state_yy.converged
    return EXIT_OK if ok else EXIT_CONVERGENCE


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sta-kit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    m = sub.add_parser("matrix", help="pairwise STA matrix of a dataset manifest")
    m.add_argument("manifest", type=Path)
    m.add_argument("--out", default="-", help="matrix CSV (default stdout)")
    m.add_argument("--meta", default=None, help="metadata JSON (default <out>.json)")
    m.add_argument("--beta", type=float, default=sta.DEFAULT_BETA)
    m.add_argument("--cost", choices=("sinkhorn", "sqeuclidean"), default="sinkhorn")
    m.add_argument("--signed", choices=sta.SIGNED_MODES, default=None)
    m.add_argument("--threads", type=int, default=1)
    _add_uot_flags(m)
    m.set_defaults(func=cmd_matrix)

    s = sub.add_parser("shift", help="soft-DTW shift gap against the theoretical bounds")
    s.add_argument("--T", type=int, default=400)
    s.add_argument("--betas", type=_floats, default=[0.1, 1.0, 10.0, 100.0])
    s.add_argument("--k-max", type=int, default=None, help="default: largest feasible shift")
    s.add_argument("--width", type=int, default=100, help="half-sine pulse width")
    s.add_argument("--amplitude", type=float, default=1.0)
    s.add_argument("--values", type=_floats, default=None, help="explicit pulse values instead of a half-sine")
    s.add_argument("--start", type=int, default=2, help="1-based start index for --values")
    s.add_argument("--baseline", type=float, default=0.0)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_shift)

    b = sub.add_parser("blobs", help="generate the synthetic 4-group activation dataset")
    b.add_argument("--out-dir", type=Path, required=True)
    b.add_argument("--grid", type=_grid, default=(16, 16), help="HxW")
    b.add_argument("--T", type=int, default=20)
    b.add_argument("--t1", type=int, default=5)
    b.add_argument("--t2", type=int, default=15)
    b.add_argument("--n", type=int, default=10, help="series per group")
    b.add_argument("--regions", type=_regions, default=None, help="'i,j,..;k,l,..' vertex indices")
    b.add_argument("--amp-low", type=float, default=1.0)
    b.add_argument("--amp-high", type=float, default=3.0)
    b.add_argument("--sigma-time", type=float, default=1.0)
    b.add_argument("--sigma-space", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_blobs)

    d = sub.add_parser("delannoy", help="sweep report of the off-diagonal Delannoy inequalities")
    d.add_argument("--m-max", type=int, default=30)
    d.add_argument("--k-max", type=int, default=30)
    d.add_argument("--out", default="-")
    d.add_argument("--table", default=None, help="also dump the Delannoy table to this CSV")
    d.set_defaults(func=cmd_delannoy)

    k = sub.add_parser("sinkhorn", help="single-pair unbalanced Sinkhorn report")
    k.add_argument("x")
    k.add_argument("y")
    k.add_argument("--grid", type=_grid, default=None, help="HxW (default 1xp)")
    k.add_argument("--exponent", type=float, default=2.0)
    k.add_argument("--graph", default=None, help="edge list CSV i,j,weight")
    k.add_argument("--out", default="-")
    k.add_argument("--plan", default=None, help="write the transport plan CSV here")
    _add_uot_flags(k)
    k.set_defaults(func=cmd_sinkhorn)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "m_max", 1) < 1 or getattr(args, "k_max", 1) is not None and getattr(args, "k_max", 1) < 0:
        ap.error("bounds must be positive")
    if getattr(args, "threads", 1) < 1:
        ap.error("--threads must be >= 1")
    try:
        return args.func(args)
    except blobs.EmptyManifestError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
