"""Command-line entry point: ``iterground {ground,bench,simulate,render}``.

Settings resolve as flags > environment > ``--config`` TOML file > defaults.
Outputs go to ``--run-dir`` if given, otherwise to a fresh
``<out>/<timestamp>-<config hash>`` directory.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 backend, 4 geometry.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from .backends import (
    CoordinateScale,
    NoisyOracleModel,
    OutOfViewPolicy,
    RemoteBackend,
    RemoteBackendConfig,
    ResponseCache,
    ScriptedBackend,
)
from .backends.cache import CACHE_DIR_ENV
from .backends.remote import API_KEY_ENV, DEFAULT_PROMPT
from .errors import BackendError, DatasetError, DimsMismatch, ElementsDontFit, GeometryError
from .geometry import AbsPoint, ImageDims, ShrinkPolicy
from .harness import (
    BBoxConvention,
    emit_report,
    load_dataset,
    load_image,
    run_benchmark,
)
from .pipeline import GroundingConfig, GroundingTrace, ground
from .render import RenderStyle, render_iteration_strip, render_trace, save_png
from .simlab import (
    ContextLossLayout,
    SweepSpec,
    SyntheticScreenSpec,
    generate_screen,
    run_context_loss_scenario,
    run_sweep,
)

log = logging.getLogger("iterground")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_BACKEND, EXIT_GEOMETRY = 0, 1, 2, 3, 4

DEFAULTS = {
    "out": "runs",
    "seed": 0,
    "backend": {
        "kind": "remote",
        "endpoint_url": None,
        "model_name": None,
        "api_key": None,
        "prompt_template": DEFAULT_PROMPT,
        "coordinate_scale": "unit",
        "max_retries": 2,
        "request_timeout_ms": 60_000,
        "temperature": 0.0,
        "max_in_flight": 4,
        "cache_dir": None,
        "sigma": 0.0,
        "out_of_view": "clamp",
        "script": [],
    },
    "grounding": {
        "iterations_n": 3,
        "min_dim_px": ShrinkPolicy().min_dim_px,
        "landscape_w_factor": ShrinkPolicy().landscape_w_factor,
        "landscape_h_factor": ShrinkPolicy().landscape_h_factor,
        "portrait_w_factor": ShrinkPolicy().portrait_w_factor,
        "portrait_h_factor": ShrinkPolicy().portrait_h_factor,
    },
    "harness": {"manifest": None, "bbox_convention": "xyxy", "workers": 4},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- argument parsing ------------------------------------------------------

def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _point(text: str) -> tuple[float, float]:
    vals = _csv_floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}")
    return vals[0], vals[1]


def _global_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    # SUPPRESS so a subcommand's copy does not reset a value given before it
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="TOML config file")
    g.add_argument("--out", default=argparse.SUPPRESS,
                   help="base directory for run directories (default: runs)")
    g.add_argument("--run-dir", type=Path, default=argparse.SUPPRESS,
                   help="write outputs exactly here instead of a new timestamped run directory")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="base seed for oracle backends and simulations")
    g.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
                   help="debug logging")
    return p


_GLOBALS = ("config", "out", "run_dir", "seed", "verbose")


def _backend_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend")
    g.add_argument("--backend", dest="kind", choices=["remote", "oracle", "scripted"],
                   help="which backend answers queries (default: remote)")
    g.add_argument("--endpoint", dest="endpoint_url",
                   help="base URL of an OpenAI-compatible API, e.g. http://host:8000/v1")
    g.add_argument("--model", dest="model_name", help="model name sent to the endpoint")
    g.add_argument("--api-key", help=f"bearer token (falls back to ${API_KEY_ENV})")
    g.add_argument("--prompt-template", help="prompt text containing {query} exactly once")
    g.add_argument("--scale", dest="coordinate_scale", choices=[s.value for s in CoordinateScale],
                   help="coordinate convention of model replies (default: unit)")
    g.add_argument("--max-retries", type=int, help="extra attempts after a failed request")
    g.add_argument("--timeout-ms", dest="request_timeout_ms", type=int,
                   help="per-request timeout in milliseconds")
    g.add_argument("--temperature", type=float, help="sampling temperature")
    g.add_argument("--max-in-flight", type=int, help="concurrent request cap for the remote backend")
    g.add_argument("--cache-dir", help=f"reply cache directory (falls back to ${CACHE_DIR_ENV})")
    g.add_argument("--sigma", type=float, help="oracle noise, in viewport-normalized units")
    g.add_argument("--out-of-view", choices=[p.value for p in OutOfViewPolicy],
                   help="oracle behaviour when the target is outside the crop")
    g.add_argument("--reply", dest="script", action="append",
                   help="scripted reply for the next iteration (repeatable)")
    g.add_argument("--script-file", type=Path, help="scripted replies, one per line")


def _grounding_options(p: argparse.ArgumentParser, with_n: bool = True) -> None:
    g = p.add_argument_group("grounding")
    if with_n:
        g.add_argument("--n", dest="iterations_n", type=int,
                       help="narrowing iterations (default: 3)")
    g.add_argument("--min-dim", dest="min_dim_px", type=int,
                   help="smallest window side in pixels (default: 28)")
    g.add_argument("--landscape-factors", type=_point, metavar="W,H",
                   help="shrink factors for landscape images (default: 0.5,0.5)")
    g.add_argument("--portrait-factors", type=_point, metavar="W,H",
                   help="shrink factors for portrait images (default: 0.8333,0.5)")


def build_parser() -> _Parser:
    common = _global_options()
    parser = _Parser(prog="iterground", parents=[common],
                     description="GUI grounding by iterative narrowing.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ground", parents=[common], help="locate one query in one screenshot",
                       description="Run the narrowing loop on one screenshot and print 'X Y'.")
    p.add_argument("image", type=Path, help="screenshot (PNG/JPEG)")
    p.add_argument("query", help="natural-language description of the element")
    _backend_options(p)
    _grounding_options(p)
    p.add_argument("--target", type=_point, metavar="X,Y",
                   help="ground-truth point in pixels (oracle backend only)")
    p.add_argument("--render", action="store_true", help="also write overlay.png and strip.png")
    p.add_argument("--save-crops", action="store_true", help="write each iteration's crop")

    p = sub.add_parser("bench", parents=[common], help="run the benchmark harness",
                       description="Evaluate baseline (n=1) and iterative narrowing on a manifest.")
    p.add_argument("manifest", type=Path, nargs="?", help="JSONL dataset manifest")
    _backend_options(p)
    _grounding_options(p)
    p.add_argument("--bbox-convention", choices=[c.value for c in BBoxConvention],
                   help="how manifest bboxes are encoded (default: xyxy)")
    p.add_argument("--workers", type=int, help="concurrent examples (default: 4)")
    p.add_argument("--no-baseline", action="store_true", help="skip the n=1 baseline column")
    p.add_argument("--label", help="row label in the report (default: model name or backend)")

    p = sub.add_parser("simulate", parents=[common], help="oracle sweeps and context-loss scenario",
                       description="Desk-scale experiments with synthetic screens.")
    p.add_argument("--scenario", choices=["sweep", "context-loss", "all"], default="sweep",
                   help="which experiment to run (default: sweep)")
    p.add_argument("--n", dest="n_values", type=_csv_ints, help="iteration counts, e.g. 1,2,3,4")
    p.add_argument("--sigma", dest="sigma_values", type=_csv_floats,
                   help="oracle noise levels, e.g. 0.02,0.05,0.1")
    p.add_argument("--trials", type=int, help="trials per (n, sigma) cell (default: 2000)")
    p.add_argument("--hit-radius", type=float,
                   help="count a hit within this many pixels instead of inside the bbox")
    p.add_argument("--width", type=int, help="synthetic screen width (default: 1024)")
    p.add_argument("--height", type=int, help="synthetic screen height (default: 512)")
    p.add_argument("--rows", type=int, help="element grid rows (default: 4)")
    p.add_argument("--cols", type=int, help="element grid columns (default: 8)")
    p.add_argument("--element-size", type=int, help="element side in pixels (default: 32)")
    p.add_argument("--workers", type=int, help="threads for trials (default: 1)")
    _grounding_options(p, with_n=False)

    p = sub.add_parser("render", parents=[common], help="draw a saved trace onto its screenshot",
                       description="Write overlay.png (and strip.png with --strip).")
    p.add_argument("trace", type=Path, help="trace JSON written by 'ground'")
    p.add_argument("image", type=Path, help="the screenshot the trace was recorded on")
    p.add_argument("--strip", action="store_true", help="also write the per-iteration strip")
    p.add_argument("--labels", action="store_true", help="number each prediction")
    p.add_argument("--stroke", type=int, help="line width in pixels (default: 3)")
    p.add_argument("--cross-size", type=int, help="cross arm length in pixels (default: 21)")
    p.add_argument("--panel-height", type=int, help="strip panel height (default: image height)")
    return parser


# -- settings --------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = json.loads(json.dumps(DEFAULTS))
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                settings = _merge(settings, tomllib.load(fh))
        except FileNotFoundError:
            raise OSError(f"config file not found: {args.config}")
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid config file {args.config}: {exc}")
    env = {"backend": {"api_key": os.environ.get(API_KEY_ENV),
                       "cache_dir": os.environ.get(CACHE_DIR_ENV)}}
    settings = _merge(settings, env)

    a = vars(args)
    flags = {"out": a.get("out"), "seed": a.get("seed"),
             "backend": {k: a.get(k) for k in DEFAULTS["backend"]},
             "grounding": {k: a.get(k) for k in DEFAULTS["grounding"]},
             "harness": {"manifest": None if a.get("manifest") is None else str(a["manifest"]),
                         "bbox_convention": a.get("bbox_convention"),
                         "workers": a.get("workers")}}
    if a.get("landscape_factors"):
        flags["grounding"]["landscape_w_factor"], flags["grounding"]["landscape_h_factor"] = \
            a["landscape_factors"]
    if a.get("portrait_factors"):
        flags["grounding"]["portrait_w_factor"], flags["grounding"]["portrait_h_factor"] = \
            a["portrait_factors"]
    if a.get("script_file"):
        flags["backend"]["script"] = [
            ln for ln in Path(a["script_file"]).read_text(encoding="utf-8").splitlines()
            if ln.strip()]
    return _merge(settings, flags)


def _grounding_config(settings: dict) -> GroundingConfig:
    g = settings["grounding"]
    n = g["iterations_n"]
    if not isinstance(n, int) or n < 1:
        raise UsageError(f"--n must be an integer >= 1, got {n}")
    try:
        policy = ShrinkPolicy(g["landscape_w_factor"], g["landscape_h_factor"],
                              g["portrait_w_factor"], g["portrait_h_factor"], g["min_dim_px"])
    except GeometryError as exc:
        raise UsageError(str(exc))
    return GroundingConfig(n, policy)


def _make_backend(settings: dict, seed: int):
    b = settings["backend"]
    kind = b["kind"]
    if kind == "oracle":
        try:
            return NoisyOracleModel(float(b["sigma"]), seed, OutOfViewPolicy(b["out_of_view"]))
        except ValueError as exc:
            raise UsageError(str(exc))
    if kind == "scripted":
        if not b["script"]:
            raise UsageError("scripted backend needs --reply or --script-file")
        return ScriptedBackend(b["script"], CoordinateScale(b["coordinate_scale"]))
    if kind != "remote":
        raise UsageError(f"unknown backend {kind!r}")
    if not b["endpoint_url"] or not b["model_name"]:
        raise UsageError("remote backend needs --endpoint and --model")
    try:
        cfg = RemoteBackendConfig(
            b["endpoint_url"], b["model_name"], b["api_key"], b["prompt_template"],
            CoordinateScale(b["coordinate_scale"]), int(b["max_retries"]),
            int(b["request_timeout_ms"]), float(b["temperature"]), int(b["max_in_flight"]))
    except ValueError as exc:
        raise UsageError(str(exc))
    cache = ResponseCache(b["cache_dir"]) if b["cache_dir"] else None
    return RemoteBackend(cfg, cache)


def _snapshot(command: str, settings: dict) -> dict:
    snap = json.loads(json.dumps(settings))
    snap["backend"].pop("api_key", None)
    snap["command"] = command
    return snap


def _run_dir(args, command: str, settings: dict) -> Path:
    if args.run_dir is not None:
        path = Path(args.run_dir)
    else:
        digest = hashlib.sha256(
            json.dumps(_snapshot(command, settings), sort_keys=True, default=str).encode()
        ).hexdigest()[:8]
        path = Path(settings["out"]) / f"{time.strftime('%Y%m%d-%H%M%S')}-{command}-{digest}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_image(path: Path) -> np.ndarray:
    if not Path(path).is_file():
        raise OSError(f"image not found: {path}")
    return load_image(path)


# -- commands --------------------------------------------------------------

def cmd_ground(args, settings) -> int:
    cfg = _grounding_config(settings)
    if args.save_crops:
        cfg = GroundingConfig(cfg.iterations_n, cfg.shrink_policy, record_crops=True)
    image = _read_image(args.image)
    backend = _make_backend(settings, int(settings["seed"]))
    target = None
    if args.target is not None:
        target = AbsPoint(*args.target)
    elif settings["backend"]["kind"] == "oracle":
        raise UsageError("oracle backend needs --target X,Y")
    trace = ground(image, args.query, backend, cfg, target=target, image_ref=str(args.image))

    run_dir = _run_dir(args, "ground", settings)
    trace_path = run_dir / "trace.json"
    trace_path.write_text(trace.to_json() + "\n", encoding="utf-8")
    if trace.crops:
        for rec, crop in zip(trace.records, trace.crops):
            save_png(crop, run_dir / f"crop_{rec.iteration_index}.png")
    if args.render:
        save_png(render_trace(image, trace), run_dir / "overlay.png")
        save_png(render_iteration_strip(image, trace), run_dir / "strip.png")
    x, y = trace.final_point.rounded()
    print(f"{x} {y}")
    print(trace_path)
    return EXIT_OK


def cmd_bench(args, settings) -> int:
    h = settings["harness"]
    if not h["manifest"]:
        raise UsageError("bench needs a manifest (argument or [harness].manifest)")
    workers = int(h["workers"])
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    cfg = _grounding_config(settings)
    try:
        convention = BBoxConvention(h["bbox_convention"])
    except ValueError as exc:
        raise UsageError(str(exc))
    examples = load_dataset(h["manifest"], convention)
    if not examples:
        raise DatasetError(f"manifest {h['manifest']} has no records")
    backend = _make_backend(settings, int(settings["seed"]))
    label = args.label or settings["backend"].get("model_name") or settings["backend"]["kind"]

    run_dir = _run_dir(args, "bench", settings)
    outcomes = run_dir / "outcomes.jsonl"
    outcomes.unlink(missing_ok=True)
    report = run_benchmark(examples, backend, cfg, run_baseline=not args.no_baseline,
                           workers=workers, label=label, outcomes_path=outcomes)
    report.config["backend"] = {k: v for k, v in settings["backend"].items()
                                if k not in ("api_key", "cache_dir", "script")}
    report.config["seed"] = settings["seed"]
    (run_dir / "report.json").write_text(emit_report(report, "json"), encoding="utf-8")
    md = emit_report(report, "markdown")
    (run_dir / "report.md").write_text(md, encoding="utf-8")
    if isinstance(backend, RemoteBackend):
        log.info("remote requests issued: %d", backend.request_count)
        backend.close()
    print(md, end="")
    print(run_dir)
    return EXIT_OK


def cmd_simulate(args, settings) -> int:
    cfg = _grounding_config(settings)
    seed = int(settings["seed"])
    run_dir = None
    if args.scenario in ("sweep", "all"):
        try:
            template = SyntheticScreenSpec(
                ImageDims(args.width or 1024, args.height or 512),
                args.rows or 4, args.cols or 8, args.element_size or 32)
            sweep = SweepSpec(tuple(args.n_values or (1, 2, 3, 4)),
                              tuple(args.sigma_values or (0.02, 0.05, 0.1)),
                              args.trials or 2000, args.hit_radius, seed)
            generate_screen(template)
        except (ValueError, GeometryError, ElementsDontFit) as exc:
            raise UsageError(f"invalid sweep: {exc}")
        result = run_sweep(template, sweep, cfg.shrink_policy, workers=args.workers or 1)
        run_dir = _run_dir(args, "simulate", settings)
        (run_dir / "sweep.csv").write_text(result.to_csv(), encoding="utf-8")
        (run_dir / "sweep.json").write_text(result.to_json(), encoding="utf-8")
        print(f"# {result.error_model}")
        print("n  sigma   accuracy  stderr   mean_err_px  lost")
        for c in result.cells:
            print(f"{c.n:<2} {c.sigma:<7g} {c.accuracy:8.4f}  {c.stderr:.4f}  "
                  f"{c.mean_error_px:11.2f}  {c.lost_target_rate:.4f}")
    if args.scenario in ("context-loss", "all"):
        n_values = args.n_values or [1, 2, 3, 4]
        if any(n < 1 for n in n_values):
            raise UsageError("--n values must be >= 1")
        report = run_context_loss_scenario(cfg.shrink_policy, n_values, ContextLossLayout())
        run_dir = run_dir or _run_dir(args, "simulate", settings)
        (run_dir / "context_loss.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        table = report.table()
        (run_dir / "context_loss.md").write_text(table, encoding="utf-8")
        print(table, end="")
        print("miss rate non-decreasing in n:", report.is_non_decreasing())
    print(run_dir)
    return EXIT_OK


def cmd_render(args, settings) -> int:
    try:
        trace = GroundingTrace.from_json(Path(args.trace).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise OSError(f"trace not found: {args.trace}")
    except (ValueError, KeyError, TypeError) as exc:
        raise OSError(f"unreadable trace {args.trace}: {exc}")
    image = _read_image(args.image)
    try:
        style = RenderStyle(stroke_px=args.stroke or 3, cross_size_px=args.cross_size or 21,
                            label_iterations=args.labels)
    except ValueError as exc:
        raise UsageError(str(exc))
    run_dir = _run_dir(args, "render", settings)
    out = save_png(render_trace(image, trace, style), run_dir / "overlay.png")
    print(out)
    if args.strip:
        out = save_png(render_iteration_strip(image, trace, style, args.panel_height),
                       run_dir / "strip.png")
        print(out)
    return EXIT_OK


COMMANDS = {"ground": cmd_ground, "bench": cmd_bench, "simulate": cmd_simulate,
            "render": cmd_render}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name in _GLOBALS:
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"iterground: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeometryError, DimsMismatch) as exc:
        print(f"iterground: geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except BackendError as exc:
        where = f" (iteration {exc.iteration_index})" if exc.iteration_index else ""
        print(f"iterground: backend error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (OSError, DatasetError) as exc:
        print(f"iterground: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
