"""``qgnn`` command line: generate -> preprocess -> train -> evaluate, plus
descriptor sweeps, hyperparameter grids, gradient checks and plotting.

Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical failure.
Failures also leave a JSON record on stderr and in ``<out>/error.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .circuits import HIERARCHICAL, PqcSpec, canonical_family
from .config import ConfigError, load_config, provenance, write_resolved
from .descriptors import DescriptorConfig, describe
from .errors import DataError, NumericalError
from .events import generate_synthetic, load_event, write_event
from .gradcheck import gradient_check, layered_graph
from .graph import CutConfig, construct_graph, graph_summary, read_graph, selection_histograms, write_graph
from .model import GNNModel, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, bce_loss, evaluate, roc_auc, split_graphs, threshold_metrics, train_seed

log = logging.getLogger("qgnn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SWEEP_AXES = ("encoding_axis", "n_layers", "n_iterations", "hidden_dim", "preset", "mode")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config -> domain objects -----------------------------------------------------

def model_config(section: dict) -> ModelConfig:
    kwargs = {k: v for k, v in section.items() if k != "preset"}
    if section.get("preset"):
        return ModelConfig.from_preset(section["preset"], **{k: v for k, v in kwargs.items()
                                                              if k not in ("edge_pqc", "node_pqc")})
    return ModelConfig(**kwargs)


def train_config(section: dict) -> TrainConfig:
    return TrainConfig(**section)


def cut_config(section: dict) -> CutConfig:
    return CutConfig.from_dict({k: v for k, v in section.items() if k != "histogram_bins"})


def preset_label(cfg: ModelConfig) -> str:
    if cfg.edge_pqc == cfg.node_pqc:
        return cfg.edge_pqc
    return f"{cfg.edge_pqc}-{cfg.node_pqc}"


# -- plumbing ---------------------------------------------------------------------

def _map(fn, items, workers: int):
    """Ordered map; a pool only when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, artifacts, seed=None, extra=None) -> Path:
    files = sorted({Path(a) for a in artifacts})
    doc = {
        "command": command,
        "provenance": provenance(cfg, seed),
        "artifacts": [{"path": str(p.relative_to(out)) if p.is_relative_to(out) else str(p),
                       "sha256": _sha256(p)} for p in files],
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _figure(ctx, fn, *args):
    if not ctx.figures:
        return []
    from . import plotting
    return [getattr(plotting, fn)(*args)]


def _graph_files(directory: Path) -> list[Path]:
    files = sorted(directory.glob("*.graph.json"))
    if not files:
        raise DataError(f"no graph files in {directory}")
    return files


def _load_graphs(directory: Path):
    return [read_graph(p) for p in _graph_files(directory)]


def _event_prefixes(cfg: dict) -> list[Path]:
    if cfg["paths"]["events"]:
        return [Path(p) for p in cfg["paths"]["events"]]
    directory = Path(cfg["paths"]["events_dir"])
    prefixes = sorted(Path(str(p)[: -len("-hits.csv")]) for p in directory.glob("*-hits.csv"))
    if not prefixes:
        raise DataError(f"no *-hits.csv files in {directory}")
    return prefixes


class Context:
    def __init__(self, cfg: dict, out: Path, figures: bool, workers: int):
        self.cfg, self.out, self.figures, self.workers = cfg, out, figures, workers


# -- generate ---------------------------------------------------------------------

def cmd_generate(ctx: Context) -> dict:
    g = ctx.cfg["generate"]
    if g["n_events"] < 1:
        raise ConfigError("generate.n_events must be >= 1")
    artifacts = []
    for i in range(g["n_events"]):
        event_id = f"event{i:09d}"
        ev = generate_synthetic(
            g["n_tracks"], [g["seed"], i], g["radii"], b_field=g["b_field"], pt_range=tuple(g["pt_range"]),
            eta_range=g["eta_range"], vertex_sigma=g["vertex_sigma"], smear=g["smear"],
            half_length=g["half_length"], n_noise=g["n_noise"], phi_range=tuple(g["phi_range"]),
            event_id=event_id,
        )
        artifacts += write_event(ev, ctx.out / event_id)
    return {"artifacts": artifacts, "seed": g["seed"]}


# -- preprocess -------------------------------------------------------------------

def _preprocess_one(item):
    prefix, out, cuts_dict, n_bins, prov = item
    cuts = CutConfig.from_dict(cuts_dict)
    event = load_event(prefix)
    graph = construct_graph(event, cuts)
    files = write_graph(graph, Path(out) / event.event_id, prov)
    return graph_summary(graph, event), selection_histograms(event, cuts, n_bins), files


def cmd_preprocess(ctx: Context) -> dict:
    cuts = cut_config(ctx.cfg["cuts"])
    prov = provenance(ctx.cfg)
    items = [(p, ctx.out, cuts.to_dict(), ctx.cfg["cuts"]["histogram_bins"], prov) for p in _event_prefixes(ctx.cfg)]
    results = _map(_preprocess_one, items, ctx.workers)
    summary = pd.DataFrame([r[0] for r in results], columns=["event_id", "N_V", "N_E", "n_true", "efficiency", "purity"])
    hist = pd.concat([r[1] for r in results], ignore_index=True)
    hist = hist.groupby(["quantity", "bin_lo", "bin_hi", "threshold"], sort=False, as_index=False)[["true", "fake"]].sum()
    hist = hist[["quantity", "bin_lo", "bin_hi", "true", "fake", "threshold"]]
    artifacts = [f for r in results for f in r[2]]
    artifacts.append(write_csv(summary, ctx.out / "summary.csv"))
    hist_path = write_csv(hist, ctx.out / "selection_histograms.csv")
    artifacts.append(hist_path)
    artifacts += _figure(ctx, "plot_selection_histograms", hist, hist_path.with_suffix(".png"))
    for row in summary.itertuples():
        log.info("%s: %d nodes, %d edges, purity %s", row.event_id, row.N_V, row.N_E, row.purity)
    return {"artifacts": artifacts}


# -- descriptors ------------------------------------------------------------------

def _descriptor_one(item):
    family, n, layers, seed, d = item
    cfg = DescriptorConfig(n_samples=d["n_samples"], n_bins=d["n_bins"], rng_seed=seed,
                           reference_input=d["reference_input"])
    rep = describe(PqcSpec(family, n, layers), cfg)
    return {"family": family, "n_qubits": n, "n_layers": layers, "E": rep.expressibility_E,
            "Eprime": rep.expressibility_Eprime, "Ent": rep.entanglement, "n_samples": cfg.n_samples, "seed": seed}


def cmd_descriptors(ctx: Context) -> dict:
    d = ctx.cfg["descriptors"]
    items = []
    for family in d["families"]:
        fam = canonical_family(family)
        layers = [1] if fam in HIERARCHICAL else d["n_layers"]
        for n in d["n_qubits"]:
            for L in layers:
                for seed in d["seeds"]:
                    items.append((fam, n, L, seed, d))
    df = pd.DataFrame(_map(_descriptor_one, items, ctx.workers))
    path = write_csv(df, ctx.out / "descriptors.csv")
    return {"artifacts": [path] + _figure(ctx, "plot_descriptors", df, path.with_suffix(".png"))}


# -- train / sweep ----------------------------------------------------------------

def _train_one(item):
    train_set, valid_set, mcfg, tcfg, seed = item
    return train_seed(train_set, valid_set, mcfg, tcfg, seed)


def _split(ctx: Context, tcfg: TrainConfig):
    graphs = _load_graphs(Path(ctx.cfg["paths"]["graphs_dir"]))
    if len(graphs) < 2:
        raise DataError("training needs at least 2 graphs")
    return split_graphs(graphs, tcfg.split_ratio, tcfg.split_seed)


def cmd_train(ctx: Context) -> dict:
    mcfg, tcfg = model_config(ctx.cfg["model"]), train_config(ctx.cfg["train"])
    train_set, valid_set = _split(ctx, tcfg)
    records = _map(_train_one, [(train_set, valid_set, mcfg, tcfg, s) for s in tcfg.seeds], ctx.workers)

    artifacts, rows, frames, timing = [], [], [], {}
    for rec in records:
        hist = rec.history_frame()
        artifacts.append(write_csv(hist, ctx.out / f"history_seed{rec.seed}.csv"))
        frames.append(hist.assign(seed=rec.seed))
        artifacts += save_checkpoint(ctx.out / f"checkpoint_seed{rec.seed}", mcfg, rec.best_params,
                                     seed=rec.seed, best_epoch=rec.best_epoch, best_valid_loss=rec.best_valid_loss,
                                     train_events=rec.train_events, valid_events=rec.valid_events,
                                     provenance=provenance(ctx.cfg, rec.seed))
        rows.append({"seed": rec.seed, "initial_valid_loss": rec.initial_valid_loss,
                     "best_valid_loss": rec.best_valid_loss, "best_epoch": rec.best_epoch})
        timing[str(rec.seed)] = rec.wall_clock
        log.info("seed %d: best valid loss %.5f at epoch %d", rec.seed, rec.best_valid_loss, rec.best_epoch)
    summary = pd.DataFrame(rows)
    artifacts.append(write_csv(summary, ctx.out / "train_summary.csv"))
    best = min(records, key=lambda r: (r.best_valid_loss, r.seed))
    artifacts += save_checkpoint(ctx.out / "best", mcfg, best.best_params, seed=best.seed,
                                 best_epoch=best.best_epoch, best_valid_loss=best.best_valid_loss,
                                 train_events=best.train_events, valid_events=best.valid_events,
                                 provenance=provenance(ctx.cfg, best.seed))
    artifacts += _figure(ctx, "plot_history", pd.concat(frames, ignore_index=True), ctx.out / "history.png")
    # wall-clock differs between runs, so it stays out of the hashed artifacts
    (ctx.out / "timing.json").write_text(json.dumps({"wall_clock_seconds": timing}, indent=2, sort_keys=True) + "\n")
    return {"artifacts": artifacts, "extra": {"model": mcfg.to_dict(), "train": tcfg.to_dict(),
                                              "train_events": best.train_events,
                                              "valid_events": best.valid_events}}


def sweep_points(base: ModelConfig, axis: str, values, modes) -> list[tuple[object, ModelConfig]]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {axis!r}")
    points = []
    for value in values:
        if axis == "preset":
            cfg = ModelConfig.from_preset(value, **{k: v for k, v in base.to_dict().items()
                                                    if k not in ("edge_pqc", "node_pqc")})
        elif axis == "hidden_dim":
            cfg = replace(base, hidden_dim=int(value), n_qubits=int(value))
        elif axis in ("n_layers", "n_iterations"):
            cfg = replace(base, **{axis: int(value)})
        else:
            cfg = replace(base, **{axis: value})
        for mode in ([None] if axis == "mode" else modes):
            points.append((value, cfg if mode is None else replace(cfg, mode=mode)))
    return points


def cmd_sweep(ctx: Context) -> dict:
    s = ctx.cfg["sweep"]
    base, tcfg = model_config(ctx.cfg["model"]), train_config(ctx.cfg["train"])
    points = sweep_points(base, s["axis"], s["values"], s["modes"])
    train_set, valid_set = _split(ctx, tcfg)
    items = [(train_set, valid_set, cfg, tcfg, seed) for _, cfg in points for seed in tcfg.seeds]
    records = iter(_map(_train_one, items, ctx.workers))

    runs, rows = [], []
    for value, cfg in points:
        recs = [next(records) for _ in tcfg.seeds]
        best = np.array([r.best_valid_loss for r in recs])
        final_auc = [r.history[-1]["valid"]["auc"] for r in recs]
        common = {s["axis"]: value, "mode": cfg.mode, "preset": preset_label(cfg), "N_D": cfg.hidden_dim,
                  "N_Q": cfg.n_qubits, "N_I": cfg.n_iterations, "N_L": cfg.n_layers, "encoding_axis": cfg.encoding_axis}
        rows.append({**common, "mean_best_loss": float(best.mean()), "std": float(best.std(ddof=0)),
                     "mean_initial_loss": float(np.mean([r.initial_valid_loss for r in recs])),
                     "mean_final_auc": float(np.mean([a for a in final_auc if a is not None])) if any(
                         a is not None for a in final_auc) else None,
                     "n_seeds": len(recs)})
        for r in recs:
            runs.append({**common, "seed": r.seed, "initial_valid_loss": r.initial_valid_loss,
                         "best_valid_loss": r.best_valid_loss, "best_epoch": r.best_epoch})
    table = pd.DataFrame(rows)
    path = write_csv(table, ctx.out / "sweep.csv")
    artifacts = [path, write_csv(pd.DataFrame(runs), ctx.out / "sweep_runs.csv")]
    artifacts += _figure(ctx, "plot_sweep", table, s["axis"], path.with_suffix(".png"))
    return {"artifacts": artifacts}


# -- evaluate ---------------------------------------------------------------------

def cmd_evaluate(ctx: Context, checkpoint: str | None, split: str) -> dict:
    ckpt = checkpoint or ctx.cfg["paths"]["checkpoint"]
    if not ckpt:
        raise ConfigError("no checkpoint given (--checkpoint or paths.checkpoint)")
    mcfg, params, header = load_checkpoint(ckpt)
    graphs = _load_graphs(Path(ctx.cfg["paths"]["graphs_dir"]))
    if split != "all":
        wanted = set(header.get(f"{split}_events", []))
        graphs = [g for g in graphs if g.event_id in wanted]
        if not graphs:
            raise DataError(f"none of the checkpoint's {split} events are in {ctx.cfg['paths']['graphs_dir']}")
    model = GNNModel(mcfg)
    threshold = ctx.cfg["train"]["threshold"]
    metric_rows, score_frames = [], []
    for g in graphs:
        e = model.forward(g, params) if g.n_edges else np.zeros(0)
        m = threshold_metrics(g.y, e, threshold)
        metric_rows.append({"event_id": g.event_id, "n_edges": g.n_edges,
                            "loss": bce_loss(g.y, e) if g.n_edges else None,
                            "acc": m["accuracy"], "prec": m["precision"], "recall": m["recall"], "auc": roc_auc(g.y, e)})
        score_frames.append(pd.DataFrame({
            "event_id": g.event_id, "edge": np.arange(g.n_edges),
            "hit_in": g.hit_id[g.edge_in], "hit_out": g.hit_id[g.edge_out],
            "y": g.y.astype(np.int64), "score": e,
        }))
    pooled = evaluate(graphs, model, params, threshold)
    metric_rows.append({"event_id": "ALL", "n_edges": int(sum(g.n_edges for g in graphs)), "loss": pooled["loss"],
                        "acc": pooled["accuracy"], "prec": pooled["precision"], "recall": pooled["recall"],
                        "auc": pooled["auc"]})
    scores = pd.concat(score_frames, ignore_index=True)
    artifacts = [write_csv(pd.DataFrame(metric_rows), ctx.out / "metrics.csv")]
    score_path = write_csv(scores, ctx.out / "edge_scores.csv")
    artifacts.append(score_path)
    artifacts += _figure(ctx, "plot_scores", scores, threshold, score_path.with_suffix(".png"))
    log.info("pooled: loss %.5f auc %s", pooled["loss"], pooled["auc"])
    return {"artifacts": artifacts, "extra": {"checkpoint": str(ckpt), "split": split}}


# -- gradcheck --------------------------------------------------------------------

def _gradcheck_one(item):
    preset, gc, model_section = item
    cfg = ModelConfig.from_preset(preset, hidden_dim=gc["hidden_dim"], n_qubits=gc["n_qubits"],
                                  n_iterations=gc["n_iterations"], n_layers=gc["n_layers"], mode=gc["mode"],
                                  encoding_axis=model_section["encoding_axis"])
    graph = layered_graph(gc["n_edges"], gc["seed"])
    return gradient_check(cfg, graph, seed=gc["seed"], step=gc["step"], tolerance=gc["tolerance"],
                          floor=gc["floor"], label=preset)


def cmd_gradcheck(ctx: Context) -> dict:
    gc = ctx.cfg["gradcheck"]
    results = _map(_gradcheck_one, [(p, gc, ctx.cfg["model"]) for p in gc["presets"]], ctx.workers)
    report = pd.DataFrame([{"preset": r.label, "mode": gc["mode"], "n_params": r.n_params,
                            "max_rel_err": r.max_rel_err, "tolerance": r.tolerance,
                            "status": "pass" if r.passed else "fail"} for r in results])
    details = pd.concat([r.table.assign(preset=r.label) for r in results], ignore_index=True)
    artifacts = [write_csv(report, ctx.out / "gradcheck.csv"),
                 write_csv(details, ctx.out / "gradcheck_details.csv")]
    for r in results:
        print(f"{r.label:<10} {r.n_params:>5} params  max rel err {r.max_rel_err:.2e}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    failed = [r.label for r in results if not r.passed]
    return {"artifacts": artifacts, "failed": failed}


# -- plot -------------------------------------------------------------------------

def plot_csv(path: Path, out: Path | None = None) -> Path:
    from . import plotting
    df = pd.read_csv(path)
    target = (out / path.name if out else path).with_suffix(".png")
    cols = set(df.columns)
    if "quantity" in cols:
        return plotting.plot_selection_histograms(df, target)
    if "Eprime" in cols:
        return plotting.plot_descriptors(df, target)
    if {"epoch", "split"} <= cols:
        return plotting.plot_history(df, target)
    if "mean_best_loss" in cols:
        return plotting.plot_sweep(df, df.columns[0], target)
    if "score" in cols:
        return plotting.plot_scores(df, 0.5, target)
    raise DataError(f"do not know how to plot {path}")


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-c", "--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. --set model.hidden_dim=8 (repeatable)")
    common.add_argument("-o", "--out", help="output directory (overrides the command's paths.* entry)")
    common.add_argument("--workers", type=int, help="worker processes for independent items")
    common.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="qgnn", description="Hybrid quantum-classical GNN for track-segment classification.")
    parser.add_argument("--version", action="version", version=f"qgnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("generate", parents=[common], help="write synthetic TrackML-style events")
    sub.add_parser("preprocess", parents=[common], help="events -> hit graphs, summary and selection histograms")
    sub.add_parser("descriptors", parents=[common], help="expressibility / entangling capability sweep")
    sub.add_parser("train", parents=[common], help="train one model configuration over several seeds")
    sub.add_parser("sweep", parents=[common], help="train over a hyperparameter grid")
    p = sub.add_parser("evaluate", parents=[common], help="score graphs with a checkpoint")
    p.add_argument("--checkpoint", help="checkpoint path (.json/.bin stem)")
    p.add_argument("--split", choices=("all", "train", "valid"), default="all",
                   help="restrict to the checkpoint's train or valid events")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every preset")
    p = sub.add_parser("plot", parents=[common], help="re-render figures from emitted CSVs")
    p.add_argument("csv", nargs="+", type=Path)
    return parser


_OUT_KEY = {"generate": "events_dir", "preprocess": "graphs_dir"}


def _emit_error(code: int, exc: BaseException, out: Path | None, command: str | None) -> int:
    record = {"status": "error", "exit_code": code, "error": type(exc).__name__, "message": str(exc),
              "command": command, "version": __version__}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        except OSError:
            pass
    return code


def run(args) -> int:
    cfg = load_config(args.config, args.set)
    key = _OUT_KEY.get(args.command, "out_dir")
    if args.out:
        cfg["paths"][key] = args.out
    if args.workers is not None:
        cfg["workers"] = args.workers
    out = Path(cfg["paths"][key])
    args._out = out
    ctx = Context(cfg, out, cfg["report"]["figures"] and not args.no_figures, int(cfg["workers"]))

    if args.command == "plot":
        for path in args.csv:
            print(plot_csv(path, Path(args.out) if args.out else None))
        return EXIT_OK

    out.mkdir(parents=True, exist_ok=True)
    resolved = write_resolved(cfg, out)
    handlers = {
        "generate": cmd_generate, "preprocess": cmd_preprocess, "descriptors": cmd_descriptors,
        "train": cmd_train, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
        "evaluate": lambda c: cmd_evaluate(c, args.checkpoint, args.split),
    }
    result = handlers[args.command](ctx)
    write_manifest(out, args.command, cfg, [resolved, *result["artifacts"]], result.get("seed"), result.get("extra"))
    if result.get("failed"):
        raise NumericalError(f"gradient check failed for {', '.join(result['failed'])}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return run(args)
    except (UsageError, ConfigError) as exc:
        return _emit_error(EXIT_USAGE, exc, getattr(args, "_out", None), getattr(args, "command", None))
    except DataError as exc:
        return _emit_error(EXIT_DATA, exc, getattr(args, "_out", None), getattr(args, "command", None))
    except (NumericalError, FloatingPointError) as exc:
        return _emit_error(EXIT_NUMERICAL, exc, getattr(args, "_out", None), getattr(args, "command", None))
    except (ValueError, TypeError) as exc:
        # invalid field values surface from the dataclass validators
        return _emit_error(EXIT_USAGE, exc, getattr(args, "_out", None), getattr(args, "command", None))


if __name__ == "__main__":
    sys.exit(main())
