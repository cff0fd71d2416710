"""Command-line front end.

Subcommands: ``gen`` (emit a synthetic cloud), ``index`` (build the voxel
index and print stats), ``sample`` (run a center sampler), ``group``
(full structuring pipeline), ``bench`` (coverage/latency sweeps, CSV),
``gca-check`` (aggregation-module invariant and gradient checks).

Exit codes: 0 success, 1 usage error, 2 data error (malformed input
file), 3 internal invariant failure. All primary output goes to stdout
unless ``--out`` is given; progress/summary lines go to stderr so stdout
stays pipeline-clean and deterministic under ``--seed``.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import gca as gca_mod
from .cloud import PointCloud, SamplingConfig, seeded_rng, validate_cloud
from .io import PointFileError, load_cloud, save_cloud_ascii, save_cloud_binary
from .pipeline import QUERIERS, SAMPLERS, cagq, write_groups
from .sampling import cas, fps, naive_grid, rps, rvs
from .synth import synth_cloud
from .voxelgrid import build_index

__all__ = ["main"]


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridquery", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_input(p):
        p.add_argument("--in", dest="infile", help="point file (ASCII or PCF1 binary)")
        p.add_argument("--gen", help="synthetic cloud spec, e.g. uniform:1000 or gaussian:1000,8,0.05")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="flat key=value file supplying flag defaults")

    p = sub.add_parser("gen", help="generate a synthetic cloud")
    p.add_argument("spec", help="kind:params with leading point count, e.g. gaussian:1000,8,0.05")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=("ascii", "pcf1"), default="ascii")
    p.add_argument("--config", help="flat key=value file supplying flag defaults")

    p = sub.add_parser("index", help="build the voxel-point index and print stats")
    add_common_input(p)
    p.add_argument("--voxel-size", required=True, help="cube edge or vx,vy,vz")
    p.add_argument("--n-v", type=int, default=None, help="per-voxel storage cap")
    p.add_argument("--k", type=int, default=8, help="used as the cap default when --n-v is unset")

    p = sub.add_parser("sample", help="run a center sampler and print the selection")
    add_common_input(p)
    p.add_argument("--voxel-size", required=True)
    p.add_argument("--M", dest="m", type=int, required=True)
    p.add_argument("--sampler", choices=SAMPLERS, required=True)
    p.add_argument("--r", type=int, default=1, help="neighborhood Chebyshev radius")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--n-v", type=int, default=None)
    p.add_argument("--k", type=int, default=8)

    p = sub.add_parser("group", help="sample centers, query nodes, write groups")
    add_common_input(p)
    p.add_argument("--voxel-size", required=True)
    p.add_argument("--M", dest="m", type=int, required=True)
    p.add_argument("--K", dest="k", type=int, required=True)
    p.add_argument("--sampler", choices=SAMPLERS, required=True)
    p.add_argument("--querier", choices=QUERIERS, required=True)
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--n-v", type=int, default=None)
    p.add_argument("--policy", choices=("repeat", "reject"), default="repeat")
    p.add_argument("--ball-radius", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--keep-sampled-center", action="store_true")
    p.add_argument("--strict-knn", action="store_true")
    p.add_argument("--out", help="groups file (default: stdout)")

    p = sub.add_parser("bench", help="coverage/latency sweep, CSV output")
    p.add_argument("--preset", choices=("table2",), default=None)
    p.add_argument("--grid", nargs="+", default=None, metavar="AXIS=V[,V...]",
                   help="e.g. --grid N=1024,8192 M=64 K=8 (cells are the cross product)")
    p.add_argument("--methods", nargs="+", default=None,
                   help="sampler+querier pairs, e.g. rps+ball cas+cube")
    p.add_argument("--gen", default="uniform", help="cloud kind spec without N, e.g. gaussian:8,0.05")
    p.add_argument("--in", dest="infile", help="source cloud file (subsampled per cell)")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-res", type=int, default=32)
    p.add_argument("--voxel-size", default=None)
    p.add_argument("--n-v", type=int, default=None)
    p.add_argument("--table", action="store_true", help="aligned text report instead of CSV")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--config", help="flat key=value file supplying flag defaults")

    p = sub.add_parser("gca-check", help="aggregation module invariant/gradient checks")
    p.add_argument("--weights", help="GCA1 weight file")
    p.add_argument("--seeded-weights", type=int, default=None, metavar="SEED")
    p.add_argument("--feature-dim", type=int, default=4)
    p.add_argument("--linear", action="store_true", help="identity activations in the seeded config")
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value file supplying flag defaults")
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Splice ``--config`` file entries in as defaults (explicit flags win
    because argparse lets later occurrences override earlier ones)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    path = argv[i + 1]
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from None
    extra: list[str] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"config {path} line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        flag = "--" + key.strip().lstrip("-")
        if value.strip() in ("true", "True"):
            extra.append(flag)
        else:
            extra.extend([flag, value.strip()])
    # insert right after the subcommand so explicit argv flags override
    return argv[:1] + extra + argv[1:]


def _parse_voxel_size(text: str) -> tuple[float, ...]:
    try:
        parts = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"bad --voxel-size {text!r}") from None
    if len(parts) == 1:
        return (parts[0], parts[0], parts[0])
    if len(parts) != 3:
        raise UsageError("--voxel-size takes one edge length or vx,vy,vz")
    return parts


_KIND_ALIASES = {
    "uniform": "uniform",
    "gaussian": "gaussian_clusters",
    "gaussian_clusters": "gaussian_clusters",
    "sphere": "sphere_surface",
    "sphere_surface": "sphere_surface",
}


def parse_gen_spec(spec: str, with_n: bool) -> tuple[str, int | None, dict]:
    """``kind:param[,param...]``. With ``with_n`` the first param is the
    point count; without it (bench mode) all params are shape params.

    uniform:  N[,side]            (bench: [side])
    gaussian: N,clusters[,spread] (bench: clusters[,spread])
    sphere:   N[,radius]          (bench: [radius])
    """
    kind_txt, _, params_txt = spec.partition(":")
    kind = _KIND_ALIASES.get(kind_txt.strip())
    if kind is None:
        raise UsageError(f"unknown cloud kind {kind_txt!r}")
    try:
        values = [float(t) for t in params_txt.split(",") if t.strip()] if params_txt else []
    except ValueError:
        raise UsageError(f"bad gen spec {spec!r}") from None
    n = None
    if with_n:
        if not values:
            raise UsageError(f"gen spec {spec!r} needs a point count, e.g. {kind_txt}:1000")
        n = int(values.pop(0))
    names = {
        "uniform": ("side",),
        "gaussian_clusters": ("clusters", "spread", "side"),
        "sphere_surface": ("radius",),
    }[kind]
    if len(values) > len(names):
        raise UsageError(f"too many params in gen spec {spec!r}")
    params = dict(zip(names, values))
    if "clusters" in params:
        params["clusters"] = int(params["clusters"])
    return kind, n, params


def _load_input_cloud(args) -> PointCloud:
    if getattr(args, "infile", None) and getattr(args, "gen", None):
        raise UsageError("give either --in or --gen, not both")
    if getattr(args, "infile", None):
        cloud = load_cloud(args.infile)
    elif getattr(args, "gen", None):
        kind, n, params = parse_gen_spec(args.gen, with_n=True)
        try:
            cloud = synth_cloud(kind, n, params, args.seed)
        except ValueError as exc:
            raise UsageError(f"bad --gen spec: {exc}") from None
    else:
        raise UsageError("need an input: --in FILE or --gen SPEC")
    report = validate_cloud(cloud)
    if not report.ok:
        raise DataError("invalid cloud: " + "; ".join(str(i) for i in report.issues[:5]))
    return cloud


def _make_config(args, m=None, k=None) -> SamplingConfig:
    return SamplingConfig(
        voxel_size=_parse_voxel_size(args.voxel_size),
        m=m if m is not None else getattr(args, "m", 1),
        k=k if k is not None else getattr(args, "k", 8),
        n_v=getattr(args, "n_v", None),
        neighborhood_radius=getattr(args, "r", 1),
        beta=getattr(args, "beta", 0.0),
        seed=args.seed,
        short_group_policy=getattr(args, "policy", "repeat"),
    )


def _cmd_gen(args) -> int:
    kind, n, params = parse_gen_spec(args.spec, with_n=True)
    try:
        cloud = synth_cloud(kind, n, params, args.seed)
    except ValueError as exc:
        raise UsageError(f"bad gen spec: {exc}") from None
    if args.format == "pcf1":
        if not args.out:
            raise UsageError("binary output needs --out")
        save_cloud_binary(cloud, args.out)
    elif args.out:
        save_cloud_ascii(cloud, args.out)
    else:
        save_cloud_ascii(cloud, sys.stdout)
    print(f"generated {len(cloud)} points ({kind})", file=sys.stderr)
    return 0


def _cmd_index(args) -> int:
    cloud = _load_input_cloud(args)
    config = _make_config(args)
    index = build_index(cloud, config, seeded_rng(args.seed))
    counts = index.stored_counts
    print(f"points {len(cloud)}")
    print(f"occupied_voxels {index.n_occupied}")
    print(f"storage_cap {config.storage_cap}")
    print(f"stored_points {int(counts.sum())}")
    print(f"max_bucket {int(counts.max())}")
    print(f"census_ok {int(index.per_voxel_total.sum()) == len(cloud)}")
    return 0


def _cmd_sample(args) -> int:
    cloud = _load_input_cloud(args)
    config = _make_config(args)
    rng = seeded_rng(args.seed)
    if args.sampler in ("rps", "fps"):
        sel = rps(cloud, args.m, rng) if args.sampler == "rps" else fps(cloud, args.m, rng)
        for i in sel.point_indices:
            p = cloud.positions[i]
            print(f"point {int(i)} {p[0]!r} {p[1]!r} {p[2]!r}")
    else:
        index = build_index(cloud, config, rng)
        if args.sampler == "rvs":
            sel = rvs(index, args.m, rng)
        elif args.sampler == "cas":
            sel = cas(index, args.m, args.beta, rng, args.r)
        else:
            sel = naive_grid(index, args.m, rng)
        for u, v, w in sel.voxel_coords:
            print(f"voxel {u} {v} {w}")
    print(f"m_effective {sel.m_effective}", file=sys.stderr)
    return 0


def _cmd_group(args) -> int:
    cloud = _load_input_cloud(args)
    config = _make_config(args)
    t0 = time.perf_counter()
    out = cagq(
        cloud,
        config,
        args.sampler,
        args.querier,
        seeded_rng(args.seed),
        workers=args.workers,
        keep_sampled_center=args.keep_sampled_center,
        ball_radius=args.ball_radius,
        strict_knn=args.strict_knn,
    )
    elapsed = time.perf_counter() - t0
    coverage = bench_mod.occupied_space_coverage(cloud, out, config.voxel_size)
    if args.out:
        write_groups(out, args.out)
    else:
        write_groups(out, sys.stdout)
    for w in out.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(
        f"m_effective {out.m_effective} coverage_pct {coverage:.2f} wall_s {elapsed:.4f}",
        file=sys.stderr,
    )
    return 0


def _parse_grid(tokens: list[str]) -> list[tuple[int, int, int]]:
    axes: dict[str, list[int]] = {}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"bad grid token {tok!r}, expected AXIS=V[,V...]")
        axis, _, vals = tok.partition("=")
        axis = axis.upper()
        if axis not in ("N", "M", "K"):
            raise UsageError(f"grid axis must be N, M or K, got {axis!r}")
        try:
            axes[axis] = [int(v) for v in vals.split(",") if v]
        except ValueError:
            raise UsageError(f"bad grid values in {tok!r}") from None
    missing = [a for a in ("N", "M", "K") if a not in axes]
    if missing:
        raise UsageError(f"grid is missing axes: {missing}")
    return [(n, m, k) for n in axes["N"] for m in axes["M"] for k in axes["K"]]


def _parse_methods(tokens: list[str]) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    for tok in tokens:
        for part in tok.split(","):
            if not part:
                continue
            if "+" not in part:
                raise UsageError(f"method {part!r} must be sampler+querier, e.g. cas+cube")
            sampler, _, querier = part.partition("+")
            if sampler not in SAMPLERS:
                raise UsageError(f"unknown sampler {sampler!r}")
            if querier not in QUERIERS:
                raise UsageError(f"unknown querier {querier!r}")
            pairs.append((sampler, querier))
    if not pairs:
        raise UsageError("no methods given")
    return pairs


def _cmd_bench(args) -> int:
    if args.preset == "table2":
        grid = bench_mod.table2_grid()
        methods = list(bench_mod.TABLE2_METHODS) if args.methods is None else _parse_methods(args.methods)
    elif args.grid:
        grid = _parse_grid(args.grid)
        if args.methods is None:
            raise UsageError("--grid needs --methods")
        methods = _parse_methods(args.methods)
    else:
        raise UsageError("need --preset table2 or an explicit --grid")

    if args.infile:
        source = load_cloud(args.infile)
    else:
        kind, _, params = parse_gen_spec(args.gen, with_n=False)
        source = bench_mod.cloud_source_from_kind(kind, params)
    vs = _parse_voxel_size(args.voxel_size) if args.voxel_size else None
    records = bench_mod.run_sweep(
        source,
        grid,
        methods,
        reps=args.reps,
        seed=args.seed,
        voxel_size=vs,
        grid_res=args.grid_res,
        n_v=args.n_v,
        on_warning=lambda msg: print(f"warning: {msg}", file=sys.stderr),
    )
    text = bench_mod.format_table(records) if args.table else bench_mod.records_to_csv(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_gca_check(args) -> int:
    if args.weights:
        config = gca_mod.load_gca_config(args.weights)
    elif args.seeded_weights is not None:
        config = gca_mod.seeded_gca_config(
            args.feature_dim,
            args.seeded_weights,
            activation="identity" if args.linear else "relu",
        )
    else:
        raise UsageError("need --weights FILE or --seeded-weights SEED")

    rng = seeded_rng(args.seed)
    failures = 0

    def report(name: str, ok: bool, detail: str) -> None:
        nonlocal failures
        if not ok:
            failures += 1
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")

    fdim = config.feature_dim
    k = 6
    # shape contract
    ok = True
    for _ in range(args.probes):
        out = gca_mod.gca_forward(
            rng.normal(size=3), rng.normal(size=(k, 3)), np.abs(rng.normal(size=k)) + 1.0,
            rng.normal(size=(k, fdim)), rng.normal(size=(k + 3, fdim)), config,
        )
        ok = ok and out.shape == (config.out_dim,)
    report("shape", ok, f"output dim {config.out_dim} over {args.probes} probes")

    # permutation invariance
    max_delta = 0.0
    for _ in range(args.probes):
        chi_c = rng.normal(size=3)
        pos = rng.normal(size=(k, 3))
        w = np.abs(rng.normal(size=k)) + 1.0
        feats = rng.normal(size=(k, fdim))
        ctx = rng.normal(size=(k + 3, fdim))
        base = gca_mod.gca_forward(chi_c, pos, w, feats, ctx, config)
        perm = rng.permutation(k)
        other = gca_mod.gca_forward(chi_c, pos[perm], w[perm], feats[perm], ctx, config)
        max_delta = max(max_delta, float(np.max(np.abs(base - other))))
    report("permutation-invariance", max_delta <= 1e-12, f"max delta {max_delta:.2e}")

    # pooling against an independent reduction
    ctx = rng.normal(size=(9, fdim))
    pooled = gca_mod.grid_context_pool(ctx, config.pooling)
    if config.pooling == "max":
        expect = np.array([max(col) for col in ctx.T])
    else:
        expect = np.array([sum(col) / len(col) for col in ctx.T])
    pool_err = float(np.max(np.abs(pooled - expect)))
    report("pooling", pool_err <= 1e-12, f"max delta {pool_err:.2e}")

    # finite differences
    linear = all(
        a == "identity"
        for spec in (config.m_spec, config.geo_spec, config.sem_spec, config.fuse_spec)
        for a in spec.activations
    )
    threshold = 1e-8 if linear else 1e-4
    worst = 0.0
    for p in range(args.probes):
        res = gca_mod.finite_diff_check(
            config,
            rng.normal(size=3), rng.normal(size=(k, 3)), np.abs(rng.normal(size=k)) + 1.0,
            rng.normal(size=(k, fdim)), rng.normal(size=(k + 3, fdim)),
            jitter_seed=args.seed + p,
        )
        worst = max(worst, res.max_rel_error)
    report("finite-diff", worst < threshold, f"max rel error {worst:.2e} (threshold {threshold:g})")

    return 0 if failures == 0 else 3


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config_file(argv)
        args = parser.parse_args(argv)
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "index":
            return _cmd_index(args)
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "group":
            return _cmd_group(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "gca-check":
            return _cmd_gca_check(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (PointFileError, gca_mod.GcaFileError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
