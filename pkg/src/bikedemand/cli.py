"""Command-line entry point: ``bikedemand <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 numeric failure.
Every subcommand accepts ``--config file.json`` whose keys are flag names;
flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .baselines import DEFAULT_KNN_K, DEFAULT_RIDGE_LAMBDA, KnnModel, RidgeModel, ridge_fit
from .copca import CoPcaTransform, fit_joint
from .divergence import DEFAULT_EPS, divergence_histogram
from .dwt import DEFAULT_BETA, WAVELETS
from .features import (DEFAULT_MISSING_DISTANCE_M, DEFAULT_POI_CATEGORIES, DEFAULT_ROAD_LEVELS,
                       build_feature_matrix)
from .grid import InvalidInputError, aggregate_demands, build_grid
from .pipeline import mine_demands
from .plots import bar_chart, line_chart
from .synth import SyntheticCitySpec, city_pair, sample_records
from .train import (TrainConfig, build_instances, dumps_checkpoint, evaluate, infer_city, latent_tensor,
                    model_from_json, model_to_json, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, max_help_position=32)


# ------------------------------------------------------------------ argument helpers

def _r(x) -> str:
    """Shortest round-trip text of a float."""
    return repr(float(x))


def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _need(ns, *names):
    for name in names:
        if getattr(ns, name, None) in (None, "", []):
            raise UsageError(f"missing required flag --{name.replace('_', '-')}")


def _grid_args(p):
    p.add_argument("--grid", help="grid JSON (as written by synth); alternative to --bbox/--n/--m")
    p.add_argument("--bbox", help="lon_min,lat_min,lon_max,lat_max")
    p.add_argument("--n", type=int, default=20, help="grid rows (latitude)")
    p.add_argument("--m", type=int, default=20, help="grid columns (longitude)")


def _grid_from(ns):
    if ns.grid:
        return io.read_grid(ns.grid)
    if not ns.bbox:
        raise UsageError("give either --grid or --bbox")
    box = _floats(ns.bbox)
    if len(box) != 4:
        raise UsageError("--bbox needs four numbers: lon_min,lat_min,lon_max,lat_max")
    return build_grid(box, ns.n, ns.m)


def _named_paths(items) -> list[tuple[str, str]]:
    out = []
    for item in items or []:
        name, sep, path = item.partition("=")
        out.append((name, path) if sep else (Path(item).parent.name or Path(item).stem, item))
    return out


# ------------------------------------------------------------------ subcommands

def cmd_synth(ns):
    _need(ns, "out")
    spec = SyntheticCitySpec(n=ns.n, m=ns.m, k=ns.k, days=ns.days, intensity=ns.intensity)
    src, tgt = city_pair(spec, ns.seed)
    with io.staged(ns.out) as st:
        for role, city in (("source", src), ("target", tgt)):
            for name, text in io.city_csvs(city.data).items():
                st.write_text(f"{role}/{name}", text)
            st.write_text(f"{role}/grid.json", io.grid_json(city.grid))
            planted = {c: {"pattern": p.tolist(), "support_days": spec.days, "accepted": True, "max_kl": 0.0}
                       for c, p in city.planted_map().items()}
            st.write_text(f"{role}/planted_patterns.json", io.patterns_json(planted))
            if role == "source" or ns.target_trips:
                trips = sample_records(city, seed=10_000 + city.seed)
                st.write_text(f"{role}/trips.csv", io.trips_csv(trips))
        meta = {"seed": ns.seed, "source_seed": src.seed, "target_seed": tgt.seed, "spec": spec.to_dict()}
        st.write_text("synth.json", json.dumps(meta, sort_keys=True, indent=1))
    print(f"wrote source and target cities ({spec.n}x{spec.m}, k={spec.k}) to {ns.out}")


def cmd_ingest(ns):
    _need(ns, "trips", "out")
    grid = _grid_from(ns)
    trips = io.read_trips(ns.trips)
    ds = aggregate_demands(trips, grid, ns.k, ns.utc_offset)
    with io.staged(ns.out) as st:
        st.write_text("demand.json", io.demand_json(ds))
    print(f"{len(trips)} records, {ds.total} counted, {ds.outside} outside the grid or day range")


def cmd_features(ns):
    _need(ns, "city", "out")
    grid = _grid_from(ns)
    data = io.read_city(ns.city)
    F = build_feature_matrix(data, grid, ns.poi_categories, ns.road_levels, ns.missing_distance)
    with io.staged(ns.out) as st:
        st.write_text("features.csv", io.features_csv(F))
    print(f"{F.values.shape[0]} cells x {F.values.shape[1]} features")


def cmd_mine(ns):
    _need(ns, "demand", "out")
    ds = io.read_demands(ns.demand)
    mined = mine_demands(ds, ns.wavelet, ns.beta, ns.eps)
    stats = divergence_histogram(ds, _floats(ns.thresholds), ns.eps)
    with io.staged(ns.out) as st:
        st.write_text("patterns.json", io.patterns_json(mined))
        hist = "threshold,fraction\n" + "".join(f"{_r(t)},{_r(f)}\n" for t, f in zip(stats.thresholds, stats.fractions))
        st.write_text("divergence_hist.csv", hist)
        rows = "".join(f"{i},{j},{_r(d)}\n" for (i, j), d in zip(stats.cells, stats.divergences))
        st.write_text("divergences.csv", "i,j,max_divergence\n" + rows)
    acc = sum(p.accepted for p in mined.values())
    print(f"{len(mined)} cells mined, {acc} accepted at beta={ns.beta}, {stats.skipped} cells skipped")


def _train_config(ns) -> TrainConfig:
    return TrainConfig(learning_rate=ns.learning_rate, batch_size=ns.batch_size, dropout=ns.dropout,
                       max_kernel=ns.max_kernel, scales=_ints(ns.scales), filters=ns.filters,
                       hidden=ns.hidden, patience=ns.patience, max_epochs=ns.max_epochs,
                       rng_seed=ns.seed, validation_fraction=ns.validation_fraction,
                       wavelet=ns.wavelet, eps=ns.eps)


def cmd_train(ns):
    _need(ns, "source_features", "target_features", "patterns", "out")
    cfg = _train_config(ns)
    cs, cols_s, Vs = io.read_features(ns.source_features)
    ct, cols_t, Vt = io.read_features(ns.target_features)
    if cols_s != cols_t:
        raise InvalidInputError("source and target feature CSVs have different columns")
    n_s, m_s = max(c[0] for c in cs), max(c[1] for c in cs)
    t, Ls, Lt = fit_joint(Vs, Vt, ns.latent_dim, cols_s)
    Fs = latent_tensor(Ls, n_s, m_s)
    patterns, meta = io.read_patterns(ns.patterns, with_meta=True)
    keep = {c: p for c, p in patterns.items()
            if not ns.accepted_only or meta[c].get("accepted", True)}
    cells = [c for c in sorted(keep) if 1 <= c[0] <= n_s and 1 <= c[1] <= m_s]
    if not cells:
        raise InvalidInputError("no training patterns fall inside the source grid")
    P = np.array([keep[c] for c in cells])
    if P.shape[1] % 2:
        raise InvalidInputError(f"pattern length {P.shape[1]} must be even")
    labels = [(i, j) for i in range(1, n_s + 1) for j in range(1, m_s + 1)]
    flat = np.array([labels.index(c) for c in cells])
    lat_cols = [f"z{d}" for d in range(1, ns.latent_dim + 1)]
    methods = ("alcnn", "lr", "knn") if ns.method == "all" else (ns.method,)
    with io.staged(ns.out) as st:
        st.write_text("copca.json", json.dumps(t.to_json(), sort_keys=True))
        st.write_text("latent_source.csv", io.matrix_csv(cs, lat_cols, Ls))
        st.write_text("latent_target.csv", io.matrix_csv(ct, lat_cols, Lt))
        if "alcnn" in methods:
            res = train(build_instances(Fs, cfg.scales, cells, P, cfg.max_kernel), cfg, ns.seed)
            ck = model_to_json(res.model, ns.seed, cfg, {"best_epoch": res.best_epoch})
            st.write_text("checkpoint.json", dumps_checkpoint(ck))
            buf = ["epoch,train_klmse,val_klmse,lr,elapsed_ms\n"]
            buf += [f"{r['epoch']},{_r(r['train_klmse'])},{_r(r['val_klmse'])},{_r(r['lr'])},{r['elapsed_ms']}\n"
                    for r in res.log]
            st.write_text("train_log.csv", "".join(buf))
            print(f"ALCNN: best epoch {res.best_epoch}, validation KLMSE {res.best_val:.6g}")
        if "lr" in methods:
            lr = ridge_fit(Ls[flat], P, ns.ridge_lambda, cfg.wavelet, cfg.eps)
            st.write_text("lr.json", dumps_checkpoint(lr.to_json(ns.seed)))
        if "knn" in methods:
            st.write_text("knn.json", dumps_checkpoint(KnnModel(Ls[flat], P, ns.knn_k).to_json(ns.seed)))
    print(f"trained {', '.join(methods)} on {len(cells)} cells; outputs in {ns.out}")


def cmd_infer(ns):
    _need(ns, "checkpoint", "out")
    with open(ns.checkpoint) as fh:
        try:
            ck = json.load(fh)
        except json.JSONDecodeError as e:
            raise InvalidInputError(f"{ns.checkpoint}: invalid JSON ({e})") from None
    if ns.latent:
        cells, _, L = io.read_features(ns.latent)
    else:
        _need(ns, "features", "copca")
        cells, cols, V = io.read_features(ns.features)
        t = CoPcaTransform.load(ns.copca)
        L = t.transform(V, cols)
    n, m = max(c[0] for c in cells), max(c[1] for c in cells)
    method = ck.get("method")
    alpha = None
    if method == "alcnn":
        model = model_from_json(ck)
        pred, alpha = infer_city(model, latent_tensor(L, n, m))
        scales = model.config.scales
    elif method == "lr":
        pred = RidgeModel.from_json(ck).predict(L)
    elif method == "knn":
        pred = KnnModel.from_json(ck).predict(L)
    else:
        raise InvalidInputError(f"{ns.checkpoint}: unknown method {method!r}")
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("non-finite predictions")
    labels = [(i, j) for i in range(1, n + 1) for j in range(1, m + 1)]
    out = {c: {"pattern": pred[r].tolist(), "method": method} for r, c in enumerate(labels)}
    with io.staged(ns.out) as st:
        st.write_text("patterns.json", io.patterns_json(out))
        if alpha is not None:
            st.write_text("attention.csv", io.matrix_csv(labels, [f"w{w}" for w in scales], alpha))
    print(f"{method}: predicted {len(labels)} cells")


def report_csv(rows) -> str:
    return "method,klmse,n_cells,skipped\n" + "".join(
        f"{name},{_r(r.klmse)},{r.n_cells},{r.skipped}\n" for name, r in rows)


def cmd_eval(ns):
    _need(ns, "truth", "pred", "out")
    truth = io.read_patterns(ns.truth)
    rows, per_cell = [], ["method,i,j,kl\n"]
    for name, path in _named_paths(ns.pred):
        r = evaluate(io.read_patterns(path), truth, ns.direction)
        rows.append((name, r))
        per_cell += [f"{name},{i},{j},{_r(kl)}\n" for (i, j), kl in sorted(r.per_cell_kl.items())]
    with io.staged(ns.out) as st:
        st.write_text("eval_report.csv", report_csv(rows))
        st.write_text("per_cell_kl.csv", "".join(per_cell))
    width = max(len(n) for n, _ in rows)
    for name, r in rows:
        print(f"{name:<{width}}  KLMSE {r.klmse:.6f}  cells {r.n_cells}  skipped {r.skipped}")


def cmd_plot(ns):
    _need(ns, "out")
    if not (ns.patterns or ns.divergences or ns.report):
        raise UsageError("nothing to plot: give --patterns, --divergences or --report")
    with io.staged(ns.out) as st:
        if ns.patterns:
            maps = [(name, io.read_patterns(p)) for name, p in _named_paths(ns.patterns)]
            if ns.cells:
                cells = [io.parse_cell_key(c.strip()) for c in ns.cells.split(";") if c.strip()]
            else:
                cells = sorted(maps[0][1])[:ns.max_cells]
            series, rows = {}, ["name,i,j,slot,value\n"]
            for name, mp in maps:
                for c in cells:
                    if c not in mp:
                        raise InvalidInputError(f"cell {c} missing from pattern map {name}")
                    y = mp[c]
                    series[f"{name} ({c[0]},{c[1]})"] = (np.arange(len(y)), y)
                    rows += [f"{name},{c[0]},{c[1]},{s},{_r(v)}\n" for s, v in enumerate(y)]
            st.write_text("pattern_curves.csv", "".join(rows))
            st.write_text("pattern_curves.svg", line_chart(series, "Daily demand patterns", "slot", "share"))
        if ns.divergences:
            df = io.read_csv(ns.divergences, ["max_divergence"])
            d = np.sort(df["max_divergence"].to_numpy(dtype=float))
            frac = np.arange(1, len(d) + 1) / max(len(d), 1)
            st.write_text("divergence_cdf.csv", "max_divergence,fraction\n"
                          + "".join(f"{_r(a)},{_r(b)}\n" for a, b in zip(d, frac)))
            st.write_text("divergence_cdf.svg", line_chart({"cells": (d, frac)}, "Max day-to-day divergence",
                                                           "divergence", "fraction of cells"))
        if ns.report:
            df = io.read_csv(ns.report, ["method", "klmse"])
            labels, vals = df["method"].astype(str).tolist(), df["klmse"].to_numpy(dtype=float)
            st.write_text("klmse_bars.csv", "method,klmse\n" + "".join(f"{a},{_r(b)}\n" for a, b in zip(labels, vals)))
            st.write_text("klmse_bars.svg", bar_chart(labels, vals, "KLMSE by method", "KLMSE"))
    print(f"plots written to {ns.out}")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bikedemand", description="Fine-grained bike demand patterns for new cities.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="command")

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, formatter_class=_fmt)
        p.add_argument("--config", help="JSON file of flag values; explicit flags win")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic source/target city pair with planted patterns")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="pair seed; cities use layout seeds 2*seed and 2*seed+1")
    p.add_argument("--n", type=int, default=20, help="grid rows")
    p.add_argument("--m", type=int, default=20, help="grid columns")
    p.add_argument("--k", type=int, default=48, help="time slots per day")
    p.add_argument("--days", type=int, default=28, help="days of trip records")
    p.add_argument("--intensity", type=float, default=200.0, help="mean rides per cell per day")
    p.add_argument("--target-trips", action="store_true", help="also write trip records for the target city")

    p = add("ingest", cmd_ingest, "aggregate trip records into per-cell daily demand vectors")
    p.add_argument("--trips", help="trip CSV")
    _grid_args(p)
    p.add_argument("--k", type=int, default=48, help="time slots per day")
    p.add_argument("--utc-offset", type=float, default=0.0, help="local time offset from UTC in seconds")
    p.add_argument("--out", help="output directory (writes demand.json)")

    p = add("features", cmd_features, "compute the per-cell geographic feature matrix")
    p.add_argument("--city", help="directory with poi/roads/light/light_centers/transport/business CSVs")
    _grid_args(p)
    p.add_argument("--poi-categories", type=int, default=DEFAULT_POI_CATEGORIES, help="number of POI categories")
    p.add_argument("--road-levels", type=int, default=DEFAULT_ROAD_LEVELS, help="number of road levels")
    p.add_argument("--missing-distance", type=float, default=DEFAULT_MISSING_DISTANCE_M,
                   help="distance in meters used when a city has no centers of a kind")
    p.add_argument("--out", help="output directory (writes features.csv)")

    p = add("mine", cmd_mine, "mine daily demand patterns and the divergence distribution")
    p.add_argument("--demand", help="demand JSON from ingest")
    p.add_argument("--wavelet", default="db2", choices=sorted(WAVELETS), help="wavelet for smoothing")
    p.add_argument("--beta", type=float, default=DEFAULT_BETA, help="acceptance threshold on KL divergence")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="additive smoothing before normalization")
    p.add_argument("--thresholds", default="0.03,0.11", help="divergence thresholds for the histogram")
    p.add_argument("--out", help="output directory")

    p = add("train", cmd_train, "fit joint PCA on both cities and train ALCNN and/or baselines on the source")
    p.add_argument("--source-features", help="source city features.csv")
    p.add_argument("--target-features", help="target city features.csv")
    p.add_argument("--patterns", help="source patterns JSON (mined)")
    p.add_argument("--method", default="all", choices=["all", "alcnn", "lr", "knn"], help="models to fit")
    p.add_argument("--latent-dim", type=int, default=16, help="joint PCA dimension")
    p.add_argument("--scales", default="1,3,5,7,9", help="local region sizes (odd); one value trains a fixed-size model")
    p.add_argument("--learning-rate", type=float, default=0.001, help="Adam step size")
    p.add_argument("--batch-size", type=int, default=128, help="mini-batch size")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout rate")
    p.add_argument("--max-kernel", type=int, default=5, help="largest convolution kernel")
    p.add_argument("--filters", type=int, default=32, help="convolution filters per branch")
    p.add_argument("--hidden", type=int, default=64, help="hidden width of the dense layers")
    p.add_argument("--patience", type=int, default=50, help="epochs without validation improvement before stopping")
    p.add_argument("--max-epochs", type=int, default=2000, help="hard cap on epochs")
    p.add_argument("--validation-fraction", type=float, default=0.2, help="share of source cells held out")
    p.add_argument("--seed", type=int, default=0, help="seed for initialization, split, shuffling and dropout")
    p.add_argument("--wavelet", default="db2", choices=sorted(WAVELETS), help="wavelet of the output head")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS, help="floor added before output normalization")
    p.add_argument("--ridge-lambda", type=float, default=DEFAULT_RIDGE_LAMBDA, help="LR penalty weight")
    p.add_argument("--knn-k", type=int, default=DEFAULT_KNN_K, help="KNN neighbors")
    p.add_argument("--accepted-only", action="store_true", help="train only on patterns accepted at mining")
    p.add_argument("--out", help="output directory")

    p = add("infer", cmd_infer, "predict patterns (and attention) for every cell of a city")
    p.add_argument("--checkpoint", help="checkpoint.json, lr.json or knn.json from train")
    p.add_argument("--features", help="raw features.csv of the city (with --copca)")
    p.add_argument("--copca", help="copca.json from train")
    p.add_argument("--latent", help="latent CSV from train, instead of --features/--copca")
    p.add_argument("--out", help="output directory")

    p = add("eval", cmd_eval, "score predicted pattern maps against ground truth")
    p.add_argument("--truth", help="ground-truth patterns JSON")
    p.add_argument("--pred", action="append", help="NAME=patterns.json; repeat for each method")
    p.add_argument("--direction", default="target||pred", choices=["target||pred", "pred||target"],
                   help="KL argument order")
    p.add_argument("--out", help="output directory")

    p = add("plot", cmd_plot, "write pattern curves, divergence distribution and KLMSE bars as CSV and SVG")
    p.add_argument("--patterns", action="append", help="NAME=patterns.json; repeatable")
    p.add_argument("--cells", help="cells to draw as 'i,j;i,j'")
    p.add_argument("--max-cells", type=int, default=4, help="cells drawn when --cells is not given")
    p.add_argument("--divergences", help="divergences.csv from mine")
    p.add_argument("--report", help="eval_report.csv from eval")
    p.add_argument("--out", help="output directory")
    return parser


def _apply_config(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if pre.command is None:
        raise UsageError("missing subcommand; see --help")
    if not getattr(pre, "config", None):
        return
    path = Path(pre.config)
    if not path.is_file():
        raise FileNotFoundError(f"{path}: no such config file")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[pre.command]
    dests = {a.dest for a in sub._actions} - {"help", "config"}
    values = {}
    for key, v in cfg.items():
        dest = key.replace("-", "_")
        if dest not in dests:
            raise UsageError(f"{path}: unknown option {key!r} for {pre.command}")
        values[dest] = v
    sub.set_defaults(**values)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        if not argv or argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK if argv else EXIT_USAGE
        _apply_config(parser, argv)
        ns = parser.parse_args(argv)
        with np.errstate(invalid="raise", divide="ignore", over="ignore", under="ignore"):
            ns.func(ns)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, FileNotFoundError, IsADirectoryError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
