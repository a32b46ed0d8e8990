"""Command-line front end: generate measures, scan coefficients, classify, emit plot data."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import FitConfig
from .generators import (
    ConstraintError,
    CounterexampleSpec,
    LineFamily,
    counterexample,
    default_parameters,
    flat_sample,
    koch_polylines,
    lipschitz_graph,
    polyline_measure,
)
from .geometry import AffinePlane
from .measure import DiscreteMeasure, MeasureFormatError, read_measure, write_measure
from .multiscale import (
    AlphaCache,
    ClassifyThresholds,
    RadiusGrid,
    StopThresholds,
    profile,
    stopping_time,
    summarize,
    verdict_for,
)

EXIT_OK, EXIT_INVALID, EXIT_DEGRADED = 0, 2, 3

SCAN_FIELDS = ["point", "radius", "alpha", "beta2", "theta", "doubling", "flag", "status"]


class UsageError(Exception):
    pass


def _num(v) -> str:
    return repr(float(v))


def _fraction_list(text: str | None):
    if text is None:
        return None
    try:
        return [Fraction(t.strip()) for t in text.split(",") if t.strip()]
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"cannot parse number list {text!r}: {exc}") from exc


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_manifest(args, out_paths, inputs, config, started) -> Path:
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "inputs": [str(p) for p in inputs],
        "config": config,
        "version": __version__,
        "wall_time": time.time() - started,
        "outputs": [str(p) for p in out_paths],
    }
    target = Path(args.manifest) if getattr(args, "manifest", None) else _manifest_path(args, out_paths)
    _write_json(target, manifest)
    return target


def _manifest_path(args, out_paths) -> Path:
    out = Path(args.out)
    if out.suffix:
        return out.with_name(out.stem + ".manifest.json")
    return out / "manifest.json"


# ---------------------------------------------------------------------------
# sources and points


def load_source(path):
    """A measure file, or a line-table sidecar (``lines`` key) which loads as an exact line family."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            data = json.load(fh)
        if isinstance(data, dict) and "lines" in data:
            lines = [(Fraction(row["height"]), Fraction(row["coef"])) for row in data["lines"]]
            return LineFamily(lines, window=float(data.get("window", 8.0)))
    return read_measure(path)


def _read_points(path, n: int) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".json":
        with open(path) as fh:
            pts = np.asarray(json.load(fh), dtype=float)
    else:
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if rows:
                        raise MeasureFormatError(f"non-numeric row in {path}: {row}")
        pts = np.asarray(rows, dtype=float)
    pts = np.atleast_2d(pts)
    if pts.shape[1] != n:
        raise MeasureFormatError(f"points need {n} coordinates, got {pts.shape[1]}")
    return pts


def _sample_points(source, m: int, seed: int):
    """``(coordinates, exact-line index or None)`` for ``m`` points drawn from the measure."""
    if isinstance(source, LineFamily):
        picks = source.support_points(m, seed)
        return [(np.array([x, float(source.heights[j])]), j) for x, j in picks]
    rng = np.random.default_rng(seed)
    p = source.weights / source.weights.sum()
    idx = rng.choice(len(source), size=m, p=p)
    return [(source.points[i].copy(), None) for i in idx]


def _locate(source, pts):
    if not isinstance(source, LineFamily):
        return [(p, None) for p in pts]
    out = []
    for p in pts:
        hs = np.array([float(h) for h in source.heights])
        out.append((p, int(np.argmin(np.abs(hs - p[1])))))
    return out


def _default_rmin(source, r_max: float) -> float:
    floor = source.resolution_floor()
    if not floor > 0:
        raise UsageError("measure has no resolvable scale; pass --rmin")
    return min(floor, r_max / 2)


# ---------------------------------------------------------------------------
# per-point work (runs in worker processes)


def _point_profile(task):
    source, point, line, grid, d, cfg, with_beta = task
    src, center = source, np.asarray(point, dtype=float)
    if line is not None:
        # exact coordinates: the point's own line sits at height 0
        src = source.recentered(line)
        center = np.array([center[0], 0.0])
    prof = profile(src, center, grid, d, cfg, cache=AlphaCache(), with_beta=with_beta)
    prof.point = np.asarray(point, dtype=float)
    return prof


def _profiles(source, located, grid, d, cfg, jobs, with_beta=True):
    tasks = [(source, p, j, grid, d, cfg, with_beta) for p, j in located]
    if jobs <= 1 or len(tasks) <= 1:
        return [_point_profile(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_point_profile, tasks))


def _grid_and_config(args, source):
    r_min = args.rmin if args.rmin is not None else _default_rmin(source, args.rmax)
    grid = RadiusGrid(r_min, args.rmax, args.per_octave)
    cfg = FitConfig(quad=args.quad, restarts=args.restarts, max_atoms=args.max_atoms)
    return grid, cfg


def _points_for(args, source):
    if args.points:
        return _locate(source, _read_points(args.points, source.ambient_dim)), [args.points]
    if args.support_sample:
        return _sample_points(source, args.support_sample, args.seed), []
    raise UsageError("give --points FILE or --support-sample M")


def _jobs(value: int) -> int:
    return os.cpu_count() or 1 if value == 0 else value


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    config = {"kind": args.kind}
    if args.kind == "counterexample":
        a_seq, h_seq = _fraction_list(args.a), _fraction_list(args.h)
        if a_seq is None and h_seq is None:
            spec = default_parameters(args.levels, args.window, args.samples_per_unit)
        else:
            if a_seq is None or h_seq is None:
                raise UsageError("--a and --h must be given together")
            spec = CounterexampleSpec(args.levels, a_seq, h_seq, args.window, args.samples_per_unit)
        levels = counterexample(spec)
        for lv in levels:
            mpath = out / f"mu_{lv.level}.json"
            write_measure(lv.measure, mpath)
            meta = out / f"mu_{lv.level}.meta.json"
            _write_json(meta, lv.metadata())
            written += [mpath, meta]
        spath = out / "spec.json"
        _write_json(spath, spec.to_json())
        written.append(spath)
        config.update(spec.to_json())
    elif args.kind == "koch":
        for st in koch_polylines(args.stages):
            mpath = out / f"koch_{st.stage}.json"
            write_measure(polyline_measure(st.vertices, args.samples_per_segment), mpath)
            meta = out / f"koch_{st.stage}.meta.json"
            _write_json(
                meta,
                {
                    "stage": st.stage,
                    "angle": st.angle,
                    "segment_length": st.segment_length,
                    "total_length": st.total_length,
                    "vertices": st.vertices.tolist(),
                },
            )
            written += [mpath, meta]
        config.update(stages=args.stages, samples_per_segment=args.samples_per_segment)
    elif args.kind == "graph":
        mu = lipschitz_graph(args.slope, args.n, args.d, args.atoms, args.seed)
        mpath = out / "graph.json"
        write_measure(mu, mpath)
        written.append(mpath)
        config.update(slope=args.slope, n=args.n, d=args.d, atoms=args.atoms, seed=args.seed)
    elif args.kind == "flat":
        mu = flat_sample(args.n, args.d, args.atoms)
        mpath = out / "flat.json"
        write_measure(mu, mpath)
        written.append(mpath)
        config.update(n=args.n, d=args.d, atoms=args.atoms)
    man = _write_manifest(args, written, [], config, started)
    print(f"wrote {len(written)} files and {man}")
    return EXIT_OK


def cmd_alpha_scan(args) -> int:
    started = time.time()
    source = load_source(args.measure)
    located, extra_inputs = _points_for(args, source)
    grid, cfg = _grid_and_config(args, source)
    profiles = _profiles(source, located, grid, args.dim, cfg, _jobs(args.jobs), with_beta=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = source.ambient_dim
    coords = [f"x{i}" for i in range(n)]
    degraded = False
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["point"] + coords + SCAN_FIELDS[1:])
        for i, prof in enumerate(profiles):
            for row in prof.rows():
                degraded |= row["status"] == "multistart-disagreement"
                wr.writerow(
                    [i]
                    + [_num(v) for v in prof.point]
                    + [_num(row[k]) for k in ("radius", "alpha", "beta2", "theta", "doubling")]
                    + [row["flag"], row["status"]]
                )
    summary = out.with_name(out.stem + ".summary.csv")
    with open(summary, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["point"] + coords + ["jones_alpha", "jones_beta", "max_doubling", "resolved_scales", "flagged_scales"])
        for i, prof in enumerate(profiles):
            ok = prof.usable
            dbl = prof.doubling[ok & np.isfinite(prof.doubling)]
            wr.writerow(
                [i]
                + [_num(v) for v in prof.point]
                + [_num(prof.jones_alpha), _num(prof.jones_beta), _num(dbl.max() if len(dbl) else math.nan)]
                + [int(ok.sum()), int((~ok).sum())]
            )
    config = {"grid": grid.to_json(), "fit": cfg.to_json(), "dim": args.dim, "seed": args.seed}
    _write_manifest(args, [out, summary], [args.measure] + extra_inputs, config, started)
    if degraded:
        print("warning: multistart disagreement at some scales", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def _parse_thresholds(text: str | None) -> StopThresholds:
    if text is None:
        return StopThresholds()
    try:
        eps, tau, big_a, c1 = (float(t) for t in text.split(","))
    except ValueError as exc:
        raise UsageError("--thresholds takes four numbers: eps,tau,A,C1") from exc
    return StopThresholds(eps, tau, big_a, c1)


def cmd_classify(args) -> int:
    started = time.time()
    source = load_source(args.measure)
    located, extra_inputs = _points_for(args, source)
    th = ClassifyThresholds(args.jmax, args.mmax, args.tau)
    try:
        grid, cfg = _grid_and_config(args, source)
    except UsageError:
        grid, cfg = None, FitConfig(quad=args.quad, restarts=args.restarts, max_atoms=args.max_atoms)
    if grid is None:
        report = summarize([], th)
        report.points = []
        report.verdict = "insufficient data"
        profiles = []
    else:
        profiles = _profiles(source, located, grid, args.dim, cfg, _jobs(args.jobs), with_beta=False)
        report = summarize([verdict_for(p, th, args.dim) for p in profiles], th)
    data = report.to_json()
    data["grid"] = grid.to_json() if grid is not None else None
    if args.stopping and isinstance(source, DiscreteMeasure) and grid is not None:
        ref = None
        if args.reference_plane:
            with open(args.reference_plane) as fh:
                ref = AffinePlane.from_json(json.load(fh))
        stop_th = _parse_thresholds(args.thresholds)
        diags = stopping_time(source, [p for p, _ in located], grid, stop_th, ref, args.dim, cfg=cfg)
        data["stopping_time"] = [dg.to_json() for dg in diags]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, data)
    config = {"thresholds": th.to_json(), "dim": args.dim, "seed": args.seed, "fit": cfg.to_json()}
    _write_manifest(args, [out], [args.measure] + extra_inputs, config, started)
    print(f"{report.verdict} (pass fraction {report.pass_fraction:.3f}); {report.caveat}")
    return EXIT_OK


PLOT_FIELDS = ["point", "x", "log_r", "alpha", "beta2", "theta", "doubling"]


def cmd_plotdata(args) -> int:
    started = time.time()
    with open(args.scan, newline="") as fh:
        rd = csv.DictReader(fh)
        header = rd.fieldnames or []
        need = {"point", "x0", "radius", "alpha", "beta2", "theta", "doubling"}
        missing = need - set(header)
        if missing:
            raise MeasureFormatError(f"scan file lacks columns: {sorted(missing)}")
        rows = list(rd)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(PLOT_FIELDS)
        for row in rows:
            wr.writerow(
                [row["point"], row["x0"], _num(math.log(float(row["radius"])))]
                + [row[k] for k in ("alpha", "beta2", "theta", "doubling")]
            )
    _write_manifest(args, [out], [args.scan], {}, started)
    return EXIT_OK


def cmd_rerun(args) -> int:
    with open(args.manifest_file) as fh:
        manifest = json.load(fh)
    return main(manifest["argv"])


# ---------------------------------------------------------------------------
# parser


def _add_scan_flags(p):
    p.add_argument("--measure", required=True, help="measure file (.json/.csv) or line-table sidecar")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--points", help="points file (.csv or .json list)")
    g.add_argument("--support-sample", type=int, help="draw this many points from the measure")
    p.add_argument("--rmin", type=float, help="smallest radius (default: measure resolution floor)")
    p.add_argument("--rmax", type=float, default=1.0)
    p.add_argument("--per-octave", type=int, default=2)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--quad", type=int, default=64)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-atoms", type=int, default=FitConfig.max_atoms, help="merge larger views on a grid")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="worker processes (0 = all cores)")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest path (default next to the output)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alphaflat", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write example measures")
    g.add_argument("kind", choices=["counterexample", "koch", "graph", "flat"])
    g.add_argument("--levels", type=int, default=4)
    g.add_argument("--a", help="split weights, comma separated (fractions allowed)")
    g.add_argument("--h", help="split heights, comma separated (fractions allowed)")
    g.add_argument("--window", type=float, default=8.0)
    g.add_argument("--samples-per-unit", type=int, default=32)
    g.add_argument("--stages", type=int, default=5)
    g.add_argument("--samples-per-segment", type=int, default=8)
    g.add_argument("--slope", type=float, default=0.2)
    g.add_argument("--n", type=int, default=2)
    g.add_argument("--d", type=int, default=1)
    g.add_argument("--atoms", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--manifest")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("alpha-scan", help="alpha/beta/density over a radius grid at many points")
    _add_scan_flags(s)
    s.set_defaults(func=cmd_alpha_scan)

    c = sub.add_parser("classify", help="Jones/doubling verdicts and a pooled label")
    _add_scan_flags(c)
    c.add_argument("--jmax", type=float, default=ClassifyThresholds.j_max)
    c.add_argument("--mmax", type=float, default=ClassifyThresholds.m_max)
    c.add_argument("--tau", type=float, default=ClassifyThresholds.tau)
    c.add_argument("--stopping", action="store_true", help="add stopping-time diagnostics")
    c.add_argument("--thresholds", help="stopping thresholds eps,tau,A,C1")
    c.add_argument("--reference-plane", help="plane JSON for the big-angle test")
    c.set_defaults(func=cmd_classify)

    pd = sub.add_parser("plotdata", help="long-form CSV for heatmaps from a scan")
    pd.add_argument("--scan", required=True)
    pd.add_argument("--out", required=True)
    pd.add_argument("--manifest")
    pd.set_defaults(func=cmd_plotdata)

    rr = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    rr.add_argument("manifest_file")
    rr.set_defaults(func=cmd_rerun)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    try:
        return args.func(args)
    except (ConstraintError, MeasureFormatError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
