"""Command-line benchmark and verification driver.

Subcommands: gen, build, sweep, verify, lid-stats, routing-difficulty.
All reports are plain CSV plus a human-readable summary on stderr-free
stdout; plotting is left to external tools. Every command is deterministic
given its flags and seed, except wall-clock timing columns. Exit code 0
means every requested check passed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import (
    compute_ground_truth,
    generate_with_queries,
    read_ivecs,
    read_vecs,
    write_ivecs,
    write_vecs,
)
from .disk import open_disk_index, save_index
from .errors import DegenerateInputError, LidannError
from .geometry import emst_edges, rng_edges, check_inclusion
from .graph import BuildParams, bfs_reachable, build
from .lid import (
    MappingConfig,
    calibrate,
    compute_alphas,
    default_k_lid,
    load_profile,
    profile_to_csv,
    save_profile,
    uniform_alphas,
)
from .search import (
    SearchParams,
    adaptive_beam_search,
    beam_search,
    recall_at_k,
    routing_difficulty_experiment,
)

SWEEP_COLUMNS = (
    "L", "recall_at_10", "qps", "mean_latency_ms", "p99_latency_ms",
    "mean_distance_evals", "mean_nodes_read",
)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base, queries = generate_with_queries(
        args.kind, args.n, args.dim, args.intrinsic_dim, seed=args.seed,
        noise=args.noise, n_queries=args.queries,
        intrinsic_dim_2=args.intrinsic_dim_2,
    )
    write_vecs(base, out / "base.fvecs")
    paths = [out / "base.fvecs"]
    if queries is not None:
        write_vecs(queries, out / "query.fvecs")
        gt = compute_ground_truth(base, queries, args.k)
        write_ivecs(gt.ids, out / "gt.ivecs")
        paths += [out / "query.fvecs", out / "gt.ivecs"]
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_build(args) -> int:
    base = read_vecs(args.base, args.elements)
    k_lid = args.k_lid if args.k_lid else default_k_lid(base.dim)
    report: dict = {"n": base.count, "dim": base.dim, "k_lid": k_lid}

    t0 = time.perf_counter()
    profile = None
    if args.fixed_alpha is not None:
        alphas = uniform_alphas(base.count, args.fixed_alpha)
        report["mode"] = f"fixed-alpha {args.fixed_alpha}"
    elif args.alpha_min == args.alpha_max:
        # Degenerate range: the logistic collapses to a constant.
        alphas = uniform_alphas(base.count, args.alpha_min)
        report["mode"] = f"fixed-alpha {args.alpha_min} (degenerate range)"
    else:
        cfg = MappingConfig(alpha_min=args.alpha_min, alpha_max=args.alpha_max)
        try:
            profile = calibrate(base, k_lid)
            alphas = compute_alphas(profile, cfg)
            report["mode"] = "adaptive"
        except DegenerateInputError as exc:
            mid = 0.5 * (args.alpha_min + args.alpha_max)
            print(f"warning: calibration degenerate ({exc}); using uniform alpha {mid}")
            alphas = uniform_alphas(base.count, mid)
            report["mode"] = f"uniform-fallback {mid}"
    calib_seconds = time.perf_counter() - t0

    if profile is not None:
        report["lid_mu"] = round(profile.mu, 1)
        report["lid_sigma"] = round(profile.sigma, 1)
        if profile.fallback_nodes.size:
            report["calibration_fallback_nodes"] = int(profile.fallback_nodes.size)
        save_profile(profile, str(args.out) + ".lid")
    hist, edges = np.histogram(alphas, bins=10, range=(args.alpha_min, args.alpha_max)
                               if args.alpha_min < args.alpha_max else None)
    report["alpha_histogram"] = {
        f"{edges[i]:.3f}-{edges[i+1]:.3f}": int(hist[i]) for i in range(len(hist))
    }

    params = BuildParams(
        max_degree=args.R, beam_build=args.L_build, max_iter=args.iters,
        seed=args.seed, degree_uncapped=args.uncapped, threads=args.threads,
    )
    t0 = time.perf_counter()
    graph = build(base, params, alphas)
    report["build_seconds"] = round(time.perf_counter() - t0, 2)
    report["calibrate_seconds"] = round(calib_seconds, 2)

    if args.uncapped:
        print("warning: uncapped graph is not saved to disk (verification mode)")
    else:
        save_index(graph, base, alphas, args.out, block_size=args.block_size)
        report["index"] = str(args.out)

    if "lid_mu" in report:
        print(f"LID profile: mu={report['lid_mu']:.1f} sigma={report['lid_sigma']:.1f}")
    print(json.dumps(report, indent=2))
    return 0


def _run_queries(source, queries, gt_ids, L, args):
    """One timed pass over all queries; returns aggregate sweep row."""
    if args.adaptive:
        profile = load_profile(args.profile)
        sp = SearchParams(
            beam=L, k=10, adaptive=True, lam=args.lam,
            beam_min=L, beam_max=args.beam_max,
            pilot_beam=args.pilot_beam, pilot_k=args.pilot_k,
        )
        run_one = lambda q: adaptive_beam_search(source, q, sp, profile)
    else:
        run_one = lambda q: beam_search(source, q, beam=L, k=10)

    def timed(q):
        t0 = time.perf_counter()
        res = run_one(q)
        return res, time.perf_counter() - t0

    n_q = queries.count
    for i in range(n_q):  # warm-up pass, untimed
        run_one(queries.values[i])

    t_wall = time.perf_counter()
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            outcomes = list(pool.map(timed, [queries.values[i] for i in range(n_q)]))
    else:
        outcomes = [timed(queries.values[i]) for i in range(n_q)]
    wall = time.perf_counter() - t_wall

    lat = np.array([t for _, t in outcomes])
    recalls = [recall_at_k(res, gt_ids[i], 10) for i, (res, _) in enumerate(outcomes)]
    return {
        "L": L,
        "recall_at_10": float(np.mean(recalls)),
        "qps": n_q / wall,
        "mean_latency_ms": float(lat.mean() * 1000),
        "p99_latency_ms": float(np.percentile(lat, 99) * 1000),
        "mean_distance_evals": float(np.mean([r.stats.distance_evals for r, _ in outcomes])),
        "mean_nodes_read": float(np.mean([r.stats.nodes_read for r, _ in outcomes])),
    }


def cmd_sweep(args) -> int:
    queries = read_vecs(args.queries, "float32")
    gt_ids = read_ivecs(args.gt)
    if gt_ids.shape[1] < 10:
        raise LidannError("ground truth must hold at least 10 ids per query")
    source = open_disk_index(args.index, mode=args.disk_mode)
    rows = [_run_queries(source, queries, gt_ids, L, args) for L in args.L_list]
    source.close()
    lines = [",".join(SWEEP_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            f"{row[c]:.6g}" if c != "L" else str(row[c]) for c in SWEEP_COLUMNS
        ))
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    print(text)
    return 0


def cmd_verify(args) -> int:
    if args.n > 500:
        print(f"refusing n={args.n}: geometry oracle verification is limited to n <= 500")
        return 2
    failures = 0
    for s in range(args.seeds):
        seed = args.seed + s
        rng = np.random.default_rng(seed)
        from .data import VectorDataset
        base = VectorDataset.from_array(
            rng.standard_normal((args.n, args.dim)).astype(np.float32)
        )
        params = BuildParams(
            max_degree=args.R, beam_build=args.L_build, seed=seed, degree_uncapped=True,
        )
        graph = build(base, params, uniform_alphas(args.n, 1.2))
        emst = emst_edges(base)
        emst_rep = check_inclusion(emst, graph)
        rng_rep = check_inclusion(rng_edges(base), graph)
        reach = bfs_reachable(graph)
        ok = emst_rep["holds"] and rng_rep["holds"] and reach == args.n
        status = "PASS" if ok else "FAIL"
        print(
            f"{status} seed={seed} emst_inclusion={emst_rep['holds']} "
            f"rng_inclusion={rng_rep['holds']} reachable={reach}/{args.n}"
        )
        if not emst_rep["holds"]:
            print(f"  missing EMST edges: {emst_rep['missing'][:10]}")
        if not rng_rep["holds"]:
            print(f"  missing RNG edges: {rng_rep['missing'][:10]}")
        failures += 0 if ok else 1

        if args.capped_R:
            capped = BuildParams(max_degree=args.capped_R, beam_build=args.L_build, seed=seed)
            cgraph = build(base, capped, uniform_alphas(args.n, 1.2))
            crep = check_inclusion(emst, cgraph)
            if not crep["holds"]:
                print(
                    f"  degree-cap caveat (R={args.capped_R}): "
                    f"{len(crep['missing'])} EMST edges evicted (not a failure)"
                )
    print(f"{args.seeds - failures}/{args.seeds} seeds passed")
    return 0 if failures == 0 else 1


def cmd_lid_stats(args) -> int:
    base = read_vecs(args.base, args.elements)
    k_lid = args.k_lid if args.k_lid else default_k_lid(base.dim)
    try:
        profile = calibrate(base, k_lid)
    except DegenerateInputError as exc:
        print(f"warning: calibration degenerate: {exc}")
        return 1
    if profile.sigma == 0:
        print("warning: zero geometric variance; adaptive mapping is undefined")
    print(f"n={base.count} k_lid={k_lid} mu={profile.mu:.4f} sigma={profile.sigma:.4f}")
    hist, edges = np.histogram(profile.lids, bins=10)
    for i in range(len(hist)):
        print(f"  [{edges[i]:8.3f}, {edges[i+1]:8.3f}): {hist[i]}")
    if profile.fallback_nodes.size:
        print(f"  {profile.fallback_nodes.size} nodes fell back to the population mean")
    if args.out_csv:
        profile_to_csv(profile, args.out_csv)
        print(f"wrote {args.out_csv}")
    return 0


def cmd_routing_difficulty(args) -> int:
    rows = routing_difficulty_experiment(
        args.dims, n=args.n, trials=args.trials, seed=args.seed,
        ambient_dim=args.ambient_dim,
    )
    print("d,success_rate,mean_distance_evals")
    for row in rows:
        print(f"{row['d']},{row['success_rate']:.4f},{row['mean_distance_evals']:.2f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lidann", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset, queries and ground truth")
    g.add_argument("--kind", required=True,
                   choices=["uniform-ball", "gaussian-clusters", "embedded-manifold", "mixed-lid"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--intrinsic-dim", type=int, required=True)
    g.add_argument("--intrinsic-dim-2", type=int, default=None,
                   help="second block dimension for mixed-lid")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.0)
    g.add_argument("--queries", type=int, default=100)
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("build", help="calibrate and build an index file")
    b.add_argument("--base", required=True)
    b.add_argument("--elements", default="float32", choices=["float32", "uint8"])
    b.add_argument("--out", required=True)
    b.add_argument("--R", type=int, default=64)
    b.add_argument("--L-build", type=int, default=100)
    b.add_argument("--alpha-min", type=float, default=1.0)
    b.add_argument("--alpha-max", type=float, default=1.5)
    b.add_argument("--k-lid", type=int, default=0, help="0 picks a default by dimension")
    b.add_argument("--iters", type=int, default=2)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--fixed-alpha", type=float, default=None,
                   help="skip calibration and use one alpha everywhere (baseline mode)")
    b.add_argument("--uncapped", action="store_true", help="verification mode, no degree cap")
    b.add_argument("--block-size", type=int, default=4096)
    b.add_argument("--threads", type=int, default=1)
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("sweep", help="recall/QPS/latency sweep over beam widths")
    s.add_argument("--index", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--L-list", type=_int_list, default=[10, 20, 50, 100])
    s.add_argument("--adaptive", action="store_true")
    s.add_argument("--profile", help="LID profile sidecar (defaults to <index>.lid)")
    s.add_argument("--lambda", dest="lam", type=float, default=0.25)
    s.add_argument("--beam-min", dest="beam_min", type=int, default=10)
    s.add_argument("--beam-max", dest="beam_max", type=int, default=400)
    s.add_argument("--pilot-beam", type=int, default=10)
    s.add_argument("--pilot-k", type=int, default=10)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--disk-mode", default="buffered", choices=["buffered", "unbuffered"])
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="structural verification against geometry oracles")
    v.add_argument("--n", type=int, default=200)
    v.add_argument("--dim", type=int, default=16)
    v.add_argument("--seeds", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--R", type=int, default=64)
    v.add_argument("--L-build", type=int, default=100)
    v.add_argument("--capped-R", type=int, default=0,
                   help="also report EMST edges evicted by this degree cap")
    v.set_defaults(func=cmd_verify)

    ls = sub.add_parser("lid-stats", help="per-node LID histogram and summary")
    ls.add_argument("--base", required=True)
    ls.add_argument("--elements", default="float32", choices=["float32", "uint8"])
    ls.add_argument("--k-lid", type=int, default=0)
    ls.add_argument("--out-csv", default=None)
    ls.set_defaults(func=cmd_lid_stats)

    rd = sub.add_parser("routing-difficulty", help="greedy routing success vs intrinsic dimension")
    rd.add_argument("--dims", type=_int_list, default=[2, 4, 8, 16])
    rd.add_argument("--n", type=int, default=500)
    rd.add_argument("--trials", type=int, default=200)
    rd.add_argument("--seed", type=int, default=0)
    rd.add_argument("--ambient-dim", type=int, default=32)
    rd.set_defaults(func=cmd_routing_difficulty)

    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "adaptive", False) and not args.profile:
        args.profile = str(args.index) + ".lid"
    try:
        return args.func(args)
    except (LidannError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
