"""Batch front-end: config loading, subcommand dispatch, CSV and plot output.

Runs are deterministic: the same config file, flags, and seed produce
byte-identical CSV.  Floats are written with repr so they round-trip
exactly, and the decimal separator is always '.'.  Result tables go to
--out (stdout by default); human-readable summaries and error messages go
to stderr so the table stays machine-readable.

Exit codes: 0 on success, 2 on a validation problem (bad flags, bad config,
geometry or cube constraints violated), 3 when an iteration fails to
converge (no expansion certificate, no threshold root).
"""

from __future__ import annotations

import argparse
import math
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import diagnostics, maps, segments
from .criticality import CriticalSystem, NoRootError, solve_critical
from .dynamics import (
    CubeSet,
    LinkedTwist,
    NonReturnedError,
    flow_psi,
    h_step_arrays,
    make_flow_state,
    orbit,
)
from .geometry import Chart, build_geometry, make_point, read_config, unfold
from .segments import NoCertificateError, certify_expansion, random_unstable_segment


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _row(*vals) -> str:
    return ",".join(_fmt(v) for v in vals)


def _emit(lines: Sequence[str], out: Optional[str]) -> None:
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _pmap(fn, items, threads: int) -> List:
    """Ordered map over independent work items, optionally on a thread pool.

    Results come back in input order whatever the scheduling, so output
    bytes never depend on --threads.
    """
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _save_plot(path: str, draw) -> None:
    # vector output with no display dependency
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# run configuration

def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return read_config(fh.read())


_WINDING_TOL = 1e-9


def _resolve(args) -> Tuple[LinkedTwist, int]:
    """Geometry plus shear strength from config and flags.

    The twist wraps the track an integer number of times: alpha * width =
    k * track_length.  Exactly one of --alpha / --k may be left free and is
    derived from the other; when both are given and the config does not pin
    the width, the width is derived instead.  Any leftover mismatch is a
    validation error.
    """
    cfg = _load_config(args.config)
    alpha, k = args.alpha, args.k
    if alpha is None and k is None:
        raise ValueError(
            "the winding relation alpha * width = k * track_length ties the "
            "shear to the track; give --alpha, --k, or both"
        )
    if k is not None and k < 1:
        raise ValueError("winding number k must be a positive integer")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if alpha is not None and k is not None and "width_w" not in cfg:
        tw = LinkedTwist.for_winding(
            alpha,
            k,
            track_length=cfg.get("track_length", 1.0),
            layer_gap_d1=cfg.get("layer_gap_d1", 0.1),
        )
        return tw, seed
    g = build_geometry(cfg)
    if alpha is None:
        alpha = k * g.track_length / g.width_w
    winding = alpha * g.width_w / g.track_length
    target = k if k is not None else round(winding)
    if target < 1 or abs(winding - target) > _WINDING_TOL:
        raise ValueError(
            f"alpha * width / track_length = {winding!r} is not an integer "
            "winding number; adjust --alpha, --k, or width_w so they agree"
        )
    return LinkedTwist(g, float(alpha)), seed


# ---------------------------------------------------------------------------
# subcommands

def _cmd_eigen(args) -> int:
    lam_p, lam_m, L = maps.eigen(args.alpha)
    _emit(
        [
            "alpha,lambda_plus,lambda_minus,slope",
            _row(float(args.alpha), lam_p, lam_m, L),
        ],
        args.out,
    )
    return 0


_SYSTEMS = {
    "single": (CriticalSystem.SINGLE_SQUARE,),
    "double": (CriticalSystem.DOUBLE_SQUARE,),
    "both": (CriticalSystem.SINGLE_SQUARE, CriticalSystem.DOUBLE_SQUARE),
}


def _cmd_critical(args) -> int:
    rows = ["system,alpha_star,residual,bracket_lo,bracket_hi"]
    for system in _SYSTEMS[args.system]:
        res = solve_critical(system, eta=args.eta)
        rows.append(
            _row(system.value, res.alpha_star, res.residual, *res.bracket)
        )
        _note(
            f"{system.value}: growth is certified for every shear above "
            f"alpha* = {res.alpha_star:.6f} (residual {res.residual:.3e})"
        )
    _emit(rows, args.out)
    return 0


def _cmd_angle_sweep(args) -> int:
    if args.steps < 1:
        raise ValueError("need at least one sweep step")
    rows = ["phi,lambda_plus,lambda_minus,det_error"]
    for i in range(args.steps):
        phi = args.phi_max * i / (args.steps - 1) if args.steps > 1 else 0.0
        lam_p, lam_m = maps.angled_eigen(args.A, phi)
        det = float(np.linalg.det(maps.angled_composite(args.A, phi)))
        rows.append(_row(phi, lam_p, lam_m, abs(det - 1.0)))
    _emit(rows, args.out)
    return 0


def _cmd_orbit(args) -> int:
    tw, seed = _resolve(args)
    g = tw.geom
    rng = random.Random(seed)
    s0 = args.s0 if args.s0 is not None else rng.uniform(0.0, g.track_length)
    y0 = args.y0 if args.y0 is not None else rng.uniform(g.y0, g.y1)
    start = make_point(g, Chart.UNFOLDED, s0, y0)
    rows = ["step,s,y,region"]
    for i, p in enumerate(orbit(start, tw, args.steps)):
        rows.append(_row(i, p.x, p.y, p.region.value))
    _emit(rows, args.out)
    return 0


def _cmd_flow(args) -> int:
    tw, seed = _resolve(args)
    g = tw.geom
    if args.dt <= 0.0:
        raise ValueError("dt must be positive")
    if args.t_max < 0.0:
        raise ValueError("t-max cannot be negative")
    rng = random.Random(seed)
    s0 = args.s0 if args.s0 is not None else rng.uniform(0.0, g.track_length)
    y0 = args.y0 if args.y0 is not None else rng.uniform(g.y0, g.y1)
    state = make_flow_state(make_point(g, Chart.UNFOLDED, s0, y0), args.theta0)
    n = int(math.floor(args.t_max / args.dt + 1e-12))
    rows = ["t,s,y,theta"]
    for i in range(n + 1):
        base = unfold(state.base)
        rows.append(_row(i * args.dt, base.x, base.y, state.theta))
        if i < n:
            state = flow_psi(state, args.dt, tw)
    _emit(rows, args.out)
    return 0


def _cmd_segment_certify(args) -> int:
    tw, seed = _resolve(args)
    if args.trials < 1:
        raise ValueError("need at least one trial")

    def one(trial: int):
        # per-trial stream keyed by (seed, trial): stable under any scheduling
        rng = random.Random(f"{seed}:{trial}")
        seg = random_unstable_segment(tw.geom, tw.alpha, rng)
        try:
            cert = certify_expansion(seg, tw.alpha, max_iters=args.max_iters)
            return trial, cert.step, cert.best_delta, cert.kind
        except NoCertificateError:
            return trial, -1, float("nan"), "none"

    results = _pmap(one, range(args.trials), args.threads)
    rows = ["trial,iters_to_certificate,best_delta,outcome"]
    failures = 0
    for trial, iters, delta, outcome in results:
        rows.append(_row(trial, iters, delta, outcome))
        failures += outcome == "none"
    _emit(rows, args.out)
    if failures:
        _note(
            f"{failures} of {args.trials} segments produced no full crossing "
            f"within {args.max_iters} iterations"
        )
        return 3
    return 0


def _cmd_lyapunov(args) -> int:
    tw, seed = _resolve(args)
    rep = diagnostics.lyapunov(
        tw.alpha, n_orbits=args.orbits, n_iters=args.iters, seed=seed, geom=tw.geom
    )
    rows = ["orbit,exponent"]
    for i, val in enumerate(rep.exponents):
        rows.append(_row(i, val))
    _emit(rows, args.out)
    _note(
        f"median exponent {rep.exponent_estimate:.6f} over "
        f"{len(rep.exponents)} orbits ({rep.n_excluded} excluded); "
        f"square-block reference ln|lambda+| = {rep.reference_log_lambda:.6f}"
    )
    if args.plot:
        def draw(ax):
            ax.hist(rep.exponents, bins=32, color="tab:blue")
            ax.axvline(rep.reference_log_lambda, color="tab:red",
                       label="square-block rate")
            ax.set_xlabel("per-orbit exponent")
            ax.set_ylabel("orbits")
            ax.legend()

        _save_plot(args.plot, draw)
    return 0


def _cmd_ergodicity(args) -> int:
    tw, seed = _resolve(args)
    disc = diagnostics.equidistribution(
        tw.alpha, args.grid, args.iters, args.orbits, seed, geom=tw.geom
    )
    _emit(
        [
            "alpha,grid_n,n_iters,n_orbits,discrepancy",
            _row(tw.alpha, args.grid, args.iters, args.orbits, disc),
        ],
        args.out,
    )
    _note(
        f"sup-norm occupancy discrepancy {disc:.6f} on a "
        f"{args.grid}x{args.grid} grid"
    )
    if args.plot:
        g = tw.geom
        rng = np.random.default_rng(seed)
        s = rng.uniform(0.0, g.track_length, args.orbits)
        y = rng.uniform(g.y0, g.y1, args.orbits)
        counts = np.zeros(args.grid * args.grid)
        for _ in range(args.iters):
            h_step_arrays(s, y, g, tw.alpha)
            counts += diagnostics.cell_histogram(s, y, g, args.grid)[0]
        _, weights = diagnostics.cell_histogram(s, y, g, args.grid)

        def draw(ax):
            with np.errstate(divide="ignore", invalid="ignore"):
                img = (counts / counts.sum()) / weights
            img = img.reshape(args.grid, args.grid).T
            im = ax.imshow(img, origin="lower", aspect="auto",
                           extent=(0.0, g.track_length, g.y0, g.y1))
            ax.figure.colorbar(im, ax=ax, label="visit / area ratio")
            ax.set_xlabel("s")
            ax.set_ylabel("y")

        _save_plot(args.plot, draw)
    return 0


def _default_cubes(g, epsilon: float) -> Tuple[CubeSet, CubeSet]:
    """One cube per lobe, bases well inside the arcs, disjoint fiber windows."""
    band = g.y1 - g.y0
    y_iv = (g.y0 + 0.2 * band, g.y0 + 0.8 * band)
    la = g.s2_lo - g.x1
    lb = g.track_length - g.s2_hi
    a = CubeSet(
        s_interval=(g.x1 + 0.2 * la, g.x1 + 0.45 * la),
        y_interval=y_iv,
        epsilon=epsilon,
        center_theta=0.30,
    )
    b = CubeSet(
        s_interval=(g.s2_hi + 0.2 * lb, g.s2_hi + 0.45 * lb),
        y_interval=y_iv,
        epsilon=epsilon,
        center_theta=0.62,
    )
    return a, b


def _cmd_nwm_demo(args) -> int:
    tw, seed = _resolve(args)
    g = tw.geom
    epsilon = args.epsilon if args.epsilon is not None else g.layer_gap_d1 / 4.0
    cube_a, cube_b = _default_cubes(g, epsilon)
    trace = diagnostics.non_weak_mixing_demo(
        cube_a, cube_b, t_max=args.t_max, dt=args.dt, cfg=tw,
        seed=seed, n_samples=args.samples,
    )
    rows = ["t,intersection_measure"]
    for t, m in zip(trace.times, trace.intersection_measure):
        rows.append(_row(t, m))
    _emit(rows, args.out)
    _note(
        f"zero intersection at {trace.zero_fraction:.3f} of sampled times "
        f"(a zero estimate still allows volume up to "
        f"{trace.zero_upper_bound:.3e} at {trace.n_samples} samples)"
    )
    if args.plot:
        def draw(ax):
            ax.plot(trace.times, trace.intersection_measure, lw=0.8)
            ax.set_xlabel("t")
            ax.set_ylabel("estimated overlap volume")

        _save_plot(args.plot, draw)
    return 0


# ---------------------------------------------------------------------------
# parser

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="key = value geometry file: track_length, "
                             "width_w, layer_gap_d1, seed")
    common.add_argument("--out", metavar="PATH",
                        help="write the CSV table here instead of stdout")
    common.add_argument("--seed", type=int,
                        help="random seed; overrides the config file")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent trials; never "
                             "affects output bytes")

    winding = argparse.ArgumentParser(add_help=False)
    winding.add_argument("--alpha", type=float,
                         help="shear strength; derived from --k and the "
                              "width when omitted")
    winding.add_argument("--k", type=int,
                         help="integer winding number alpha * width / "
                              "track_length; derived when omitted")

    parser = argparse.ArgumentParser(
        prog="linkedtwist",
        description="Twisted-track dynamics toolbox: eigenstructure, shear "
                    "thresholds, orbits, the fiber flow, expansion "
                    "certificates, and mixing diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", parents=[common],
                       help="eigenvalues of the crossing-square composite")
    p.add_argument("--alpha", type=float, required=True)
    p.set_defaults(handler=_cmd_eigen)

    p = sub.add_parser("critical", parents=[common],
                       help="threshold shear strength for certified growth")
    p.add_argument("--system", choices=sorted(_SYSTEMS), required=True)
    p.add_argument("--eta", type=float, default=0.25,
                   help="slack split between the two growth requirements")
    p.set_defaults(handler=_cmd_critical)

    p = sub.add_parser("angle-sweep", parents=[common],
                       help="eigenvalues of two shears meeting at an angle")
    p.add_argument("--A", type=float, required=True, help="shear strength")
    p.add_argument("--steps", type=int, default=100,
                   help="number of sampled angles")
    p.add_argument("--phi-max", type=float, default=math.pi / 2,
                   help="largest sampled angle")
    p.set_defaults(handler=_cmd_angle_sweep)

    p = sub.add_parser("orbit", parents=[common, winding],
                       help="iterates of the composite twist map")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--s0", type=float, help="start arc position (default random)")
    p.add_argument("--y0", type=float, help="start transverse position (default random)")
    p.set_defaults(handler=_cmd_orbit)

    p = sub.add_parser("flow", parents=[common, winding],
                       help="time samples of the fiber flow over the track")
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--s0", type=float, help="start arc position (default random)")
    p.add_argument("--y0", type=float, help="start transverse position (default random)")
    p.add_argument("--theta0", type=float, default=0.25,
                   help="start fiber angle in [0, 1)")
    p.set_defaults(handler=_cmd_flow)

    p = sub.add_parser("segment-certify", parents=[common, winding],
                       help="expansion certificates for random thin segments")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.set_defaults(handler=_cmd_segment_certify)

    p = sub.add_parser("lyapunov", parents=[common, winding],
                       help="top-exponent ensemble along random orbits")
    p.add_argument("--orbits", type=int, default=64)
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--plot", metavar="PATH",
                   help="write an exponent histogram (vector graphics)")
    p.set_defaults(handler=_cmd_lyapunov)

    p = sub.add_parser("ergodicity", parents=[common, winding],
                       help="occupancy discrepancy of random orbits")
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--iters", type=int, default=100_000)
    p.add_argument("--orbits", type=int, default=64)
    p.add_argument("--plot", metavar="PATH",
                   help="write an occupancy heat map (vector graphics)")
    p.set_defaults(handler=_cmd_ergodicity)

    p = sub.add_parser("nwm-demo", parents=[common, winding],
                       help="overlap trace showing the flow is not weakly mixing")
    p.add_argument("--epsilon", type=float,
                   help="fiber half-window; default quarter of the layer gap")
    p.add_argument("--t-max", type=float, default=100.0)
    p.add_argument("--dt", type=float, default=0.37,
                   help="sample spacing; keep it incommensurate with the "
                        "fiber period so the sweep covers all fiber phases")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--plot", metavar="PATH",
                   help="write the overlap trace (vector graphics)")
    p.set_defaults(handler=_cmd_nwm_demo)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; -h exits 0, bad flags exit 2
        return 0 if exc.code in (0, None) else 2
    try:
        return args.handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NoRootError, NoCertificateError, NonReturnedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
