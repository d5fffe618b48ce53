"""Batch command-line interface for the analysis pipeline.

Subcommands: ``ingest``, ``synth``, ``kde``, ``fit``, ``modes``,
``cluster-links``, ``report``.  Every command is seed-deterministic:
rerunning with identical inputs and flags writes byte-identical outputs,
with timestamps confined to the run manifest.  Exit codes: 0 success,
2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import IngestError, read_dataset, write_dataset
from .fitting import FitConfig, FitError, compare_models, fit
from .hac import cut_by_id, hac_ward, rescale_parameter_vectors, summarize
from .kde import (
    BandwidthMatrix,
    KdeModel,
    default_grid_ranges,
    evaluate_grid,
    find_modes,
    grid_to_csv,
    grid_to_json_dict,
    rule_of_thumb_bandwidth,
)
from .medoids import ClaraConfig, mode_trajectory
from .models import PARAM_NAMES, FdModelKind
from .synth import build_series, load_spec_file
from .traffic import (
    ABNORMAL_CATEGORIES,
    INCIDENT_CATEGORIES,
    DEFAULT_MIN_SPEED_KMH,
    PointScales,
    SpeedLimit,
    count_events,
    derive_points,
    segment_by_limit,
)

_LIMIT_ORDER = [SpeedLimit.NATIONAL, SpeedLimit.L40, SpeedLimit.L50,
                SpeedLimit.L60, SpeedLimit.L70]


class _Run:
    """Collects inputs/outputs and writes the run manifest."""

    # path-valued arguments are provenance, not configuration: they are
    # recorded in the manifest but excluded from the config hash so reruns
    # into a different directory stay byte-identical
    _PATH_ARGS = ("out_dir", "data_dir", "spec")

    def __init__(self, command: str, args: argparse.Namespace, out_dir: Path):
        self.command = command
        self.out_dir = out_dir
        self.started = time.monotonic()
        self.started_utc = datetime.now(timezone.utc).isoformat()
        settings = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        self.settings = {k: str(v) for k, v in settings.items()}
        hashed = {k: v for k, v in self.settings.items() if k not in self._PATH_ARGS}
        blob = json.dumps({"command": command, "version": __version__,
                           "settings": hashed}, sort_keys=True)
        self.config_hash = hashlib.sha256(blob.encode()).hexdigest()
        self.outputs: dict[str, str] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def manifest_ref(self) -> dict:
        return {"config_hash": self.config_hash}

    def write_json(self, name: str, obj: dict) -> None:
        obj = dict(obj)
        obj["manifest"] = self.manifest_ref()
        path = self.out_dir / name
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.register(path)

    def register(self, path: Path) -> None:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.outputs[path.name] = digest

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "settings": self.settings,
            "config_hash": self.config_hash,
            "started_utc": self.started_utc,
            "wall_clock_s": time.monotonic() - self.started,
            "outputs": dict(sorted(self.outputs.items())),
        }
        with open(self.out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_csv_rows(run: _Run, name: str, header: list[str], rows) -> None:
    import csv

    path = run.out_dir / name
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    run.register(path)


def _load_series(args) -> list:
    result = read_dataset(args.data_dir)
    for line in result.warnings:
        print(f"warning: {line}", file=sys.stderr)
    series = result.series
    if getattr(args, "links", None):
        wanted = [s.strip() for s in args.links.split(",") if s.strip()]
        by_id = result.by_id()
        missing = [w for w in wanted if w not in by_id]
        if missing:
            raise IngestError(args.data_dir, None,
                              f"unknown link ids in --links: {', '.join(missing)}")
        series = [by_id[w] for w in wanted]
    if not series:
        raise IngestError(args.data_dir, None, "dataset contains no usable links")
    return series


def _num(x: float) -> str:
    return repr(float(x))


def cmd_ingest(args) -> int:
    run = _Run("ingest", args, Path(args.out_dir))
    result = read_dataset(args.data_dir)
    for line in result.warnings:
        print(f"warning: {line}", file=sys.stderr)
    total = len(result.series) + len(result.unusable_links)
    print(f"{len(result.series)} of {total} links usable")
    for path in write_dataset(run.out_dir, result.series):
        run.register(path)
    run.write_json("ingest_summary.json", {
        "links_usable": len(result.series),
        "links_total": total,
        "unusable_links": result.unusable_links,
        "observations": sum(len(s.observations) for s in result.series),
    })
    run.finish()
    return 0


def cmd_synth(args) -> int:
    run = _Run("synth", args, Path(args.out_dir))
    specs = load_spec_file(args.spec)
    all_series = []
    truths = {}
    for link_spec in specs:
        series, truth = build_series(link_spec)
        all_series.append(series)
        truths[series.link.id] = truth
    for path in write_dataset(run.out_dir, all_series):
        run.register(path)
    run.write_json("truth.json", {"links": truths})
    run.finish()
    print(f"wrote {len(all_series)} synthetic links to {run.out_dir}")
    return 0


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        nx, ny = text.lower().split("x")
        return int(nx), int(ny)
    except ValueError:
        raise ValueError(f"--grid expects NxM, got {text!r}") from None


def _scaled_segment_arrays(series, min_speed):
    """Per-limit (N, 2) arrays of scaled (density, flow), plus raw points
    and the link's scales."""
    points = derive_points(series, min_speed)
    if len(points) < 2:
        raise ValueError(f"link {series.link.id}: fewer than 2 usable points")
    scales = PointScales.from_points(points)
    segments = segment_by_limit(series, min_speed)
    ordered = {limit: segments[limit] for limit in _LIMIT_ORDER if limit in segments}
    arrays = {
        limit: np.array([[p.density / scales.rho_crit, p.flow / scales.max_flow]
                         for p in pts])
        for limit, pts in ordered.items()
    }
    return arrays, ordered, scales


def cmd_kde(args) -> int:
    run = _Run("kde", args, Path(args.out_dir))
    n_x, n_y = _parse_grid(args.grid)
    for series in sorted(_load_series(args), key=lambda s: s.link.id):
        points = derive_points(series, args.min_speed)
        if len(points) < 2:
            print(f"warning: link {series.link.id}: fewer than 2 points, skipped",
                  file=sys.stderr)
            continue
        scales = PointScales.from_points(points)
        data = np.array([[p.density / scales.rho_crit, p.flow / scales.max_flow]
                         for p in points])
        if args.bandwidth == "rule":
            bandwidth = rule_of_thumb_bandwidth(data)
        else:
            h1, h2 = (float(v) for v in args.bandwidth.split(","))
            bandwidth = BandwidthMatrix.fixed_diagonal(h1, h2)
        model = KdeModel.fit(data, bandwidth)
        x_range, y_range = default_grid_ranges(model)
        grid = evaluate_grid(model, x_range, y_range, n_x, n_y)
        grid_csv = run.out_dir / f"kde_{series.link.id}.csv"
        grid_to_csv(grid, grid_csv)
        run.register(grid_csv)
        envelope = grid_to_json_dict(grid)
        envelope["link_id"] = series.link.id
        envelope["scales"] = {"max_flow": scales.max_flow,
                              "rho_crit": scales.rho_crit,
                              "max_speed": scales.max_speed}
        run.write_json(f"kde_{series.link.id}.json", envelope)
        modes = find_modes(grid, min_separation=args.min_separation)
        _write_csv_rows(run, f"modes_{series.link.id}.csv",
                        ["x", "y", "density"],
                        [[_num(x), _num(y), _num(d)] for (x, y), d in modes])
    run.finish()
    return 0


def _parse_kinds(text: str) -> list[FdModelKind]:
    if text == "all":
        return list(FdModelKind)
    return [FdModelKind(text)]


def _ranking_rows(link_id: str, ranking) -> list[list[str]]:
    return [
        [link_id, r.kind.value, _num(r.rmse),
         _num(r.r_squared) if r.r_squared is not None else "",
         _num(r.sse)]
        for r in ranking.results
    ]


def cmd_fit(args) -> int:
    run = _Run("fit", args, Path(args.out_dir))
    kinds = _parse_kinds(args.model)
    config = FitConfig(n_starts=args.starts, rng_seed=args.seed)
    rows = []
    for series in sorted(_load_series(args), key=lambda s: s.link.id):
        points = derive_points(series, args.min_speed)
        ranking = compare_models(points, kinds, config)
        if not ranking.results:
            reasons = "; ".join(str(v) for v in ranking.failures.values())
            raise FitError(f"link {series.link.id}: all models failed: {reasons}")
        rows.extend(_ranking_rows(series.link.id, ranking))
        run.write_json(f"fit_{series.link.id}.json", {
            "link_id": series.link.id,
            "results": [r.to_json_dict() for r in ranking.results],
            "failures": {k.value: v for k, v in ranking.failures.items()},
        })
    _write_csv_rows(run, "ranking.csv",
                    ["link_id", "model", "rmse", "r2", "sse"], rows)
    run.finish()
    return 0


def cmd_modes(args) -> int:
    run = _Run("modes", args, Path(args.out_dir))
    config = ClaraConfig(sample_size=args.sample_size, n_restarts=args.restarts,
                         rng_seed=args.seed)
    for series in sorted(_load_series(args), key=lambda s: s.link.id):
        arrays, raw_segments, scales = _scaled_segment_arrays(series, args.min_speed)
        if not args.by_limit:
            merged = np.concatenate(list(arrays.values()), axis=0)
            arrays = {SpeedLimit.NATIONAL: merged}
        trajectory = mode_trajectory(arrays, config)
        entries = {}
        for entry in trajectory.entries:
            entries[entry.limit.name] = {
                mode: {
                    "density": stat.density * scales.rho_crit,
                    "flow": stat.flow * scales.max_flow,
                    "std": stat.std,
                    "n_members": stat.n_members,
                }
                for mode, stat in (("low", entry.low), ("high", entry.high))
            }
        payload = {"link_id": series.link.id, "by_limit": entries,
                   "skipped": [[k.name, reason] for k, reason in trajectory.skipped]}
        if len(trajectory.entries) >= 2:
            first, last = trajectory.entries[0], trajectory.entries[-1]
            payload["relative_change"] = {
                "high_density": 1.0 - last.high.density / first.high.density,
                "low_density": 1.0 - last.low.density / first.low.density,
                "from": first.limit.name,
                "to": last.limit.name,
            }
        for limit, reason in trajectory.skipped:
            print(f"warning: link {series.link.id} segment {limit.name} "
                  f"skipped: {reason}", file=sys.stderr)
        run.write_json(f"modes_{series.link.id}.json", payload)
    run.finish()
    return 0


def cmd_cluster_links(args) -> int:
    run = _Run("cluster-links", args, Path(args.out_dir))
    kind = FdModelKind(args.model)
    config = FitConfig(n_starts=args.starts, rng_seed=args.seed)
    series_list = sorted(_load_series(args), key=lambda s: s.link.id)
    if args.k > len(series_list):
        raise IngestError(args.data_dir, None,
                          f"--k {args.k} exceeds the {len(series_list)} usable links")
    params_by_link = {}
    for series in series_list:
        points = derive_points(series, args.min_speed)
        result = fit(kind, points, config)
        params_by_link[series.link.id] = {
            name: result.best_params.values[name] for name in PARAM_NAMES[kind]
        }
    vectors = rescale_parameter_vectors({
        link_id: np.array([p[name] for name in PARAM_NAMES[kind]])
        for link_id, p in params_by_link.items()
    })
    dendrogram = hac_ward(vectors)
    assignments = cut_by_id(dendrogram, args.k)
    summaries = summarize(assignments, params_by_link,
                          {s.link.id: s for s in series_list})

    run.write_json("dendrogram.json", {
        "model": kind.value,
        "leaves": list(dendrogram.leaf_ids),
        "merges": dendrogram.to_json_list(),
    })
    _write_csv_rows(run, "assignments.csv", ["link_id", "cluster"],
                    [[i, assignments[i]] for i in sorted(assignments)])
    run.write_json("summaries.json",
                   {"clusters": [s.to_json_dict() for s in summaries]})
    run.finish()
    return 0


def cmd_report(args) -> int:
    run = _Run("report", args, Path(args.out_dir))
    series_list = sorted(_load_series(args), key=lambda s: s.link.id)
    fit_config = FitConfig(n_starts=args.starts, rng_seed=args.seed)
    clara_config = ClaraConfig(rng_seed=args.seed)
    cluster_kind = FdModelKind(args.model)

    ranking_rows = []
    best_models = {}
    trajectory_rows = []
    params_by_link = {}
    for series in series_list:
        link_id = series.link.id
        points = derive_points(series, args.min_speed)

        ranking = compare_models(points, tuple(FdModelKind), fit_config)
        if not ranking.results:
            raise FitError(f"link {link_id}: all models failed")
        ranking_rows.extend(_ranking_rows(link_id, ranking))
        best_models[link_id] = ranking.best.kind.value
        for r in ranking.results:
            if r.kind is cluster_kind:
                params_by_link[link_id] = {
                    n: r.best_params.values[n] for n in PARAM_NAMES[cluster_kind]
                }

        arrays, _, scales = _scaled_segment_arrays(series, args.min_speed)
        trajectory = mode_trajectory(arrays, clara_config)
        for entry in trajectory.entries:
            for mode, stat in (("low", entry.low), ("high", entry.high)):
                trajectory_rows.append([
                    link_id, entry.limit.name, mode,
                    _num(stat.density * scales.rho_crit),
                    _num(stat.flow * scales.max_flow),
                    _num(stat.std),
                ])

    missing = [i for i in best_models if i not in params_by_link]
    if missing:
        raise FitError(
            f"{cluster_kind.value} failed on links: {', '.join(sorted(missing))}")

    k = min(args.k, len(series_list))
    vectors = rescale_parameter_vectors({
        link_id: np.array([p[n] for n in PARAM_NAMES[cluster_kind]])
        for link_id, p in params_by_link.items()
    })
    if len(vectors) >= 2:
        dendrogram = hac_ward(vectors)
        assignments = cut_by_id(dendrogram, k)
        dendrogram_json = dendrogram.to_json_list()
    else:
        assignments = {vectors[0].link_id: 1}
        dendrogram_json = []
    summaries = summarize(assignments, params_by_link,
                          {s.link.id: s for s in series_list})

    _write_csv_rows(run, "ranking.csv",
                    ["link_id", "model", "rmse", "r2", "sse"], ranking_rows)
    _write_csv_rows(run, "mode_trajectories.csv",
                    ["link_id", "limit", "mode", "density", "flow", "std"],
                    trajectory_rows)
    _write_csv_rows(run, "cluster_boxes.csv",
                    ["cluster", "parameter", "min", "q1", "median", "q3", "max"],
                    [[s.label, name, _num(f.min), _num(f.q1), _num(f.median),
                      _num(f.q3), _num(f.max)]
                     for s in summaries
                     for name, f in s.parameter_summary.items()])
    _write_csv_rows(run, "event_counts.csv",
                    ["link_id", "cluster", "incidents", "abnormal"],
                    [[s.link.id, assignments[s.link.id],
                      count_events(s, INCIDENT_CATEGORIES),
                      count_events(s, ABNORMAL_CATEGORIES)]
                     for s in series_list])
    run.write_json("report.json", {
        "links": [s.link.id for s in series_list],
        "best_model_by_link": best_models,
        "cluster_model": cluster_kind.value,
        "k": k,
        "assignments": assignments,
        "dendrogram": dendrogram_json,
        "artifacts": ["ranking.csv", "mode_trajectories.csv",
                      "cluster_boxes.csv", "event_counts.csv"],
    })
    run.finish()
    return 0


def _add_common(parser, seed=True):
    parser.add_argument("--out-dir", required=True, help="output directory")
    if seed:
        parser.add_argument("--seed", type=int, default=0,
                            help="base RNG seed (default 0)")


def _add_data(parser):
    parser.add_argument("--data-dir", required=True,
                        help="dataset directory (links/timeseries/events/signs CSVs)")
    parser.add_argument("--links", default=None,
                        help="comma-separated link id filter")
    parser.add_argument("--min-speed", type=float, default=DEFAULT_MIN_SPEED_KMH,
                        help="drop observations slower than this (km/h)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fundiag",
        description="Flow-density fundamental diagram analysis pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a dataset and write its canonical form")
    p.add_argument("--data-dir", required=True)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec file")
    p.add_argument("--spec", required=True, help="synth spec JSON")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kde", help="kernel density grids and modes per link")
    _add_data(p)
    _add_common(p, seed=False)
    p.add_argument("--grid", default="256x256", help="grid resolution NxM")
    p.add_argument("--bandwidth", default="rule",
                   help="'rule' (normal-reference) or 'h1,h2' fixed diagonal")
    p.add_argument("--min-separation", type=int, default=2,
                   help="mode suppression radius in grid cells")
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("fit", help="fit diagram models and rank by RMSE")
    _add_data(p)
    _add_common(p)
    p.add_argument("--model", default="all",
                   help="'all' or one model tag (e.g. daganzo_newell)")
    p.add_argument("--starts", type=int, default=100,
                   help="random restarts per fit (default 100)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("modes", help="two-mode locations per speed limit")
    _add_data(p)
    _add_common(p)
    p.add_argument("--by-limit", action="store_true",
                   help="cluster each speed-limit segment separately")
    p.add_argument("--sample-size", type=int, default=None,
                   help="CLARA sample size (default 200 + 2k)")
    p.add_argument("--restarts", type=int, default=50,
                   help="CLARA restarts (default 50)")
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("cluster-links", help="Ward clustering of fitted parameters")
    _add_data(p)
    _add_common(p)
    p.add_argument("--k", type=int, default=3, help="number of clusters (default 3)")
    p.add_argument("--model", default="daganzo_newell",
                   help="model whose parameters are clustered")
    p.add_argument("--starts", type=int, default=100)
    p.set_defaults(func=cmd_cluster_links)

    p = sub.add_parser("report", help="full pipeline: fits, modes, clusters, events")
    _add_data(p)
    _add_common(p)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--model", default="daganzo_newell")
    p.add_argument("--starts", type=int, default=100)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (IngestError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
