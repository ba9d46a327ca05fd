"""``dart3`` command line: gen -> init-stats -> adapt -> eval, plus sweep and curve.

Settings resolve in three layers: built-in defaults, then the
``[common]`` and ``[<subcommand>]`` sections of ``--config``, then flags
given on the command line. The resolved settings are written as
``config.ini`` next to the outputs; passing that file back with
``--config`` repeats the run.

Exit codes: 0 success, 2 usage, 3 I/O, 4 data/consistency, 5 numeric.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import scenarios
from .adapter import AdapterConfig
from .camnorm import CameraStats, compute_camera_stats
from .errors import Dart3Error, NumericError, StorageError, UsageError
from .metrics import curve_csv, error_rate_curve, evaluate_retrieval, nmi_camera_bias
from .pipeline import METHODS, run_method
from .store import EmbeddingSet, load_embedding_set, save_embedding_set
from .synth import SynthConfig, generate_clean, standardize_per_camera


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    if isinstance(text, list):
        return text
    return [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]


def _float_list(text):
    if isinstance(text, list):
        return text
    return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]


@dataclass(frozen=True)
class Opt:
    name: str
    type: object
    default: object
    help: str = ""
    choices: tuple = ()
    flag: bool = False  # store_true switch

    @property
    def dest(self):
        return self.name.replace("-", "_")


_SC = scenarios.CAMERA_SHIFT
_SY = _SC.synth

COMMON = [
    Opt("seed", int, 0, "64-bit seed for every random stream"),
    Opt("out", str, "out", "output directory"),
]

GEN = [
    Opt("n-ids", int, _SY.n_ids),
    Opt("samples-query", int, _SY.samples_per_id_query, "query samples per identity"),
    Opt("samples-gallery", int, _SY.samples_per_id_gallery, "gallery samples per identity"),
    Opt("dim", int, _SY.dim),
    Opt("n-cameras", int, _SY.n_cameras),
    Opt("id-center-sigma", float, _SY.id_center_sigma),
    Opt("within-id-sigma", float, _SY.within_id_sigma),
    Opt("spread-gradient", float, _SY.spread_gradient, "grow within-identity spread across identities"),
    Opt("query-cameras-per-id", int, _SY.query_cameras_per_id, "0 = all cameras"),
    Opt("gallery-cameras-per-id", int, _SY.gallery_cameras_per_id, "0 = all cameras"),
    Opt("shuffle", _bool, _SY.shuffle, "shuffle row order"),
    Opt("beta-scale", float, _SC.beta_scale, "shift norm in units of cluster separation"),
    Opt("alpha-low", float, _SC.alpha_low),
    Opt("alpha-high", float, _SC.alpha_high),
    Opt("noise-sigma", float, _SC.noise_sigma, "per-sample noise on alpha and beta"),
    Opt("standardize", _bool, False, "standardize clean features per camera", flag=True),
]

ADAPTER = [
    Opt("method", str, "dart3_lite", choices=METHODS),
    Opt("tau", float, 100.0),
    Opt("k", int, 3),
    Opt("lr", float, 1e-4),
    Opt("steps", int, 1, "optimization steps per batch"),
    Opt("batch-size", int, 32),
    Opt("episodic", _bool, False, "reset parameters before every batch", flag=True),
    Opt("grounding", int, 0, "grounding samples appended to each batch"),
    Opt("grounding-cameras", _int_list, [], "gallery cameras forming the grounding pool"),
    Opt("fallback", str, "global", choices=("global", "identity")),
    Opt("pool-mode", str, "pooled", choices=("pooled", "separate"),
        help="pooling for statistics computed on the fly when --stats is not given"),
    Opt("optimizer", str, "adam", choices=("adam", "sgd")),
]

INPUTS = [
    Opt("query", str, "", "query .npy (manifest alongside with .json suffix)"),
    Opt("gallery", str, "", "gallery .npy (manifest alongside with .json suffix)"),
]

COMMANDS = {
    "gen": GEN,
    "init-stats": INPUTS + [
        Opt("pool-mode", str, "pooled", choices=("pooled", "separate")),
        Opt("cameras", _int_list, [], "expected camera IDs (empty ones are reported)"),
        Opt("scale-floor", float, 1e-6),
    ],
    "adapt": INPUTS + [Opt("stats", str, "", "camera statistics JSON (default: computed from the inputs)")]
    + ADAPTER,
    "eval": INPUTS + [
        Opt("max-rank", int, 20),
        Opt("nmi", _bool, False, "also report camera NMI of the query features", flag=True),
    ],
    "sweep": INPUTS + [
        Opt("stats", str, ""),
        Opt("taus", _float_list, [100.0]),
        Opt("ks", _int_list, [3]),
        Opt("steps-grid", _int_list, [1]),
        Opt("batch-sizes", _int_list, [32]),
        Opt("max-rank", int, 20),
    ] + [o for o in ADAPTER if o.name not in ("tau", "k", "steps", "batch-size")],
    "curve": INPUTS + [
        Opt("measure", str, "euclidean", choices=("euclidean", "cosine", "entropy_proxy")),
        Opt("n-bins", int, 8),
        Opt("k", int, 3),
        Opt("tau", float, 100.0),
    ],
}


def _add_options(parser, opts):
    for o in opts:
        if o.flag:
            parser.add_argument(f"--{o.name}", dest=o.dest, action="store_const", const=True,
                                default=argparse.SUPPRESS, help=o.help)
        else:
            kwargs = dict(dest=o.dest, default=argparse.SUPPRESS, help=o.help)
            if o.choices:
                kwargs["choices"] = o.choices
            kwargs["type"] = o.type
            parser.add_argument(f"--{o.name}", **kwargs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
    _add_options(common, COMMON)
    parser = argparse.ArgumentParser(prog="dart3", parents=[common], description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, parents=[common])
        _add_options(p, opts)
    return parser


def resolve(command: str, cli: dict) -> dict:
    """Merge defaults, config-file values and explicit flags."""
    opts = COMMON + COMMANDS[command]
    settings = {o.dest: o.default for o in opts}
    path = cli.get("config")
    if path:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise StorageError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config {path}: {exc}") from exc
        by_name = {o.dest: o for o in opts}
        for section in ("common", command):
            if not cp.has_section(section):
                continue
            for key, raw in cp.items(section):
                dest = key.replace("-", "_")
                if dest not in by_name:
                    raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
                opt = by_name[dest]
                try:
                    value = opt.type(raw)
                except ValueError as exc:
                    raise UsageError(f"{path}: bad value for {key}: {exc}") from exc
                if opt.choices and value not in opt.choices:
                    raise UsageError(f"{path}: {key} must be one of {opt.choices}")
                settings[dest] = value
    for o in opts:
        if o.dest in cli:
            settings[o.dest] = cli[o.dest]
    return settings


def _format_value(value) -> str:
    if isinstance(value, list):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def write_resolved(command: str, settings: dict, out: Path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp["common"] = {o.name: _format_value(settings[o.dest]) for o in COMMON}
    cp[command] = {o.name: _format_value(settings[o.dest]) for o in COMMANDS[command]}
    buf = io.StringIO()
    cp.write(buf)
    (out / "config.ini").write_text(buf.getvalue(), encoding="utf-8")


def _manifest_for(array_path: str) -> Path:
    return Path(array_path).with_suffix(".json")


def _load(path: str, what: str) -> EmbeddingSet:
    if not path:
        raise UsageError(f"--{what} is required")
    return load_embedding_set(path, _manifest_for(path))


def _save(eset: EmbeddingSet, out: Path, stem: str) -> list[Path]:
    paths = [out / f"{stem}.npy", out / f"{stem}.json"]
    save_embedding_set(eset, *paths)
    return paths


def _require(settings, *keys):
    for key in keys:
        if settings[key] in ("", None):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def adapter_config(s: dict, **override) -> AdapterConfig:
    s = {**{o.dest: o.default for o in ADAPTER}, **s}
    fields = dict(
        tau=s["tau"], k=s["k"], lr=s["lr"], steps_per_batch=s["steps"],
        batch_size=s["batch_size"], mode="episodic" if s["episodic"] else "non_episodic",
        objective="temp" if s["method"] == "temp_lite" else "dart3",
        grounding_per_batch=s["grounding"], optimizer=s["optimizer"], seed=s["seed"],
        unseen_camera_fallback="identity" if s["fallback"] == "identity" else "global_stats",
    )
    fields.update(override)
    try:
        return AdapterConfig(**fields)
    except Dart3Error as exc:
        raise UsageError(str(exc)) from exc


def _grounding_pool(s: dict, gallery: EmbeddingSet):
    if s["grounding"] <= 0:
        return None
    cams = s["grounding_cameras"] or gallery.cameras
    keep = np.isin(gallery.camids, cams)
    if not keep.any():
        raise UsageError(f"no gallery rows in grounding cameras {cams}")
    return EmbeddingSet(gallery.data[keep], gallery.pids[keep], gallery.camids[keep], "gallery")


# --- subcommands -------------------------------------------------------------

def cmd_gen(s: dict, out: Path) -> None:
    synth = SynthConfig(
        n_ids=s["n_ids"], samples_per_id_query=s["samples_query"],
        samples_per_id_gallery=s["samples_gallery"], dim=s["dim"], n_cameras=s["n_cameras"],
        id_center_sigma=s["id_center_sigma"], within_id_sigma=s["within_id_sigma"],
        seed=s["seed"], spread_gradient=s["spread_gradient"],
        query_cameras_per_id=s["query_cameras_per_id"],
        gallery_cameras_per_id=s["gallery_cameras_per_id"], shuffle=s["shuffle"])
    scenario = scenarios.Scenario(synth, beta_scale=s["beta_scale"], alpha_low=s["alpha_low"],
                                  alpha_high=s["alpha_high"], noise_sigma=s["noise_sigma"])
    clean_q, clean_g, _ = generate_clean(synth)
    if s["standardize"]:
        clean_q, clean_g = _standardize_pair(clean_q, clean_g)
    data = scenarios.bias_pair(clean_q, clean_g, scenarios.scenario_spec(scenario, s["seed"]),
                               s["seed"])
    _save(data.clean_query, out, "clean_query")
    _save(data.clean_gallery, out, "clean_gallery")
    _save(data.query, out, "query")
    _save(data.gallery, out, "gallery")
    data.spec.save(out / "truth.json")


def _standardize_pair(q: EmbeddingSet, g: EmbeddingSet):
    union = EmbeddingSet(np.concatenate([q.data, g.data]), np.concatenate([q.pids, g.pids]),
                         np.concatenate([q.camids, g.camids]), "query")
    std = standardize_per_camera(union).data
    return q.with_data(std[:len(q)]), g.with_data(std[len(q):])


def cmd_init_stats(s: dict, out: Path) -> None:
    query, gallery = _load(s["query"], "query"), _load(s["gallery"], "gallery")
    stats = compute_camera_stats(query, gallery, s["pool_mode"], s["scale_floor"],
                                 cameras=s["cameras"] or None)
    for msg in stats.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    stats.save(out / "stats.json")


def _stats_for(s: dict, query, gallery):
    if s["method"] == "noadapt":
        return None
    if s["stats"]:
        return CameraStats.load(s["stats"])
    return compute_camera_stats(query, gallery, s["pool_mode"])


def _adapt_outputs(s: dict, query, gallery, stats, config: AdapterConfig):
    q_out, g_out, diags = run_method(s["method"], query, gallery, stats, config,
                                     _grounding_pool(s, gallery))
    return q_out, g_out, diags


def cmd_adapt(s: dict, out: Path) -> None:
    _require(s, "query", "gallery")
    query, gallery = _load(s["query"], "query"), _load(s["gallery"], "gallery")
    stats = _stats_for(s, query, gallery)
    config = adapter_config(s)
    written = []
    try:
        q_out, g_out, diags = _adapt_outputs(s, query, gallery, stats, config)
        written += _save(q_out, out, "adapted_query")
        written += _save(g_out, out, "adapted_gallery")
        doc = {"method": s["method"], "n_queries": len(query)}
        timing = {"method": s["method"]}
        if diags is not None:
            doc.update(diags.to_dict(timing=False))
            timing["wall_ms"] = diags.wall_ms
            timing["batches"] = [{"batch_index": b.batch_index, "wall_ms": b.wall_ms}
                                 for b in diags.batches]
        path = out / "diagnostics.json"
        path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        written.append(path)
        (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n", encoding="utf-8")
    except NumericError:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def cmd_eval(s: dict, out: Path) -> None:
    _require(s, "query", "gallery")
    query, gallery = _load(s["query"], "query"), _load(s["gallery"], "gallery")
    report = evaluate_retrieval(query, gallery, s["max_rank"])
    if s["nmi"]:
        report.nmi_camera = nmi_camera_bias(query, seed=s["seed"])
    (out / "eval.json").write_text(report.to_json(), encoding="utf-8")
    (out / "per_camera.csv").write_text(report.per_camera_csv(), encoding="utf-8")
    (out / "cmc.csv").write_text(report.cmc_csv(), encoding="utf-8")
    print(f"mAP {report.map_score:.4f}  rank-1 {report.rank1:.4f}  "
          f"({report.n_valid} valid queries)")


def _sweep_point(args):
    s, point, query, gallery, stats = args
    tau, k, steps, bs = point
    config = adapter_config(s, tau=tau, k=k, steps_per_batch=steps, batch_size=bs)
    t0 = time.perf_counter()
    q_out, g_out, _ = _adapt_outputs(s, query, gallery, stats, config)
    wall_ms = (time.perf_counter() - t0) * 1e3
    report = evaluate_retrieval(q_out, g_out, s["max_rank"])
    return {"tau": tau, "k": k, "steps": steps, "batch_size": bs,
            "map": report.map_score, "rank1": report.rank1, "wall_ms": wall_ms}


def cmd_sweep(s: dict, out: Path) -> None:
    _require(s, "query", "gallery")
    grid = list(itertools.product(s["taus"], s["ks"], s["steps_grid"], s["batch_sizes"]))
    if not grid:
        raise UsageError("sweep grid is empty")
    query, gallery = _load(s["query"], "query"), _load(s["gallery"], "gallery")
    stats = _stats_for(s, query, gallery)
    jobs = [(s, point, query, gallery, stats) for point in grid]
    workers = max(1, int(os.environ.get("DART3_THREADS", "1") or 1))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "k", "steps", "batch_size", "map", "rank1", "wall_ms"])
    for r in rows:
        w.writerow([repr(r["tau"]), r["k"], r["steps"], r["batch_size"],
                    repr(r["map"]), repr(r["rank1"]), f"{r['wall_ms']:.3f}"])
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")


def cmd_curve(s: dict, out: Path) -> None:
    _require(s, "query", "gallery")
    query, gallery = _load(s["query"], "query"), _load(s["gallery"], "gallery")
    rows = error_rate_curve(query, gallery, s["measure"], s["n_bins"], k=s["k"], tau=s["tau"])
    (out / f"curve_{s['measure']}.csv").write_text(curve_csv(rows), encoding="utf-8")


HANDLERS = {
    "gen": cmd_gen,
    "init-stats": cmd_init_stats,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "curve": cmd_curve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cli = vars(ns)
    command = cli.pop("command")
    try:
        settings = resolve(command, cli)
        out = Path(settings["out"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create {out}: {exc}") from exc
        HANDLERS[command](settings, out)
        write_resolved(command, settings, out)
    except Dart3Error as exc:
        print(f"dart3 {command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
