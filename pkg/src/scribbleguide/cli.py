"""Command-line front end: generate, gradcheck, evaluate.

Exit codes: 0 success, 1 gradient-check failure, 2 malformed input
(config/scribbles/reports), 3 numerical abort during sampling.

Run configs are JSON with optional sections; omitted fields take the
documented defaults. Every run writes the fully resolved config next to its
outputs, one subdirectory per seed with the final sample as binary PGM plus
per-step diagnostics and the evaluation report.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .attention import GuidanceConfig, cross_loss, grad_cross_loss
from .core import Rng
from .diffusion import GuidanceBlowupError, guided_sample, make_schedule
from .experiments import find_template_index, oriented_scribble_set
from .metrics import (
    evaluate_sample,
    infer_target_index,
    report_from_dict,
    report_to_dict,
)
from .scribble import (
    Scribble,
    ScribbleFormatError,
    ScribbleGeometry,
    ScribbleSet,
    load_scribble_set,
    rasterize,
)
from .toyworld import WorldSpec, build_world, cross_attention_map, decode_final

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_run_config",
    "run_generate",
    "run_gradcheck",
    "run_evaluate",
    "write_pgm",
    "main",
]

GRAD_TOL_ATTENTION = 1e-4
GRAD_TOL_LATENT = 1e-3


class ConfigError(ValueError):
    """Malformed run configuration."""


@dataclasses.dataclass
class ScheduleParams:
    n_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    n_inference: int = 50


@dataclasses.dataclass
class RunConfig:
    world: WorldSpec
    guidance: GuidanceConfig
    schedule: ScheduleParams
    seeds: tuple = (0,)
    target: dict = None   # None | {"template_index": i} | {"class","orientation_deg","center"}
    out_dir: str = "out"
    workers: int = 1


def _build_section(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"section {where!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where!r} section: {exc}") from exc


def run_config_from_dict(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    known = {"world", "guidance", "schedule", "seeds", "target", "out_dir", "workers"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    world_data = dict(data.get("world", {}))
    for key in ("centers",):
        if key in world_data:
            world_data[key] = tuple(tuple(p) for p in world_data[key])
    for key in ("classes", "orientations_deg", "axes", "priors"):
        if key in world_data and world_data[key] is not None:
            world_data[key] = tuple(world_data[key])
    world = _build_section(WorldSpec, world_data, "world")
    guidance_data = dict(data.get("guidance", {}))
    for key in ("agg_resolutions", "agg_weights"):
        if key in guidance_data and guidance_data[key] is not None:
            guidance_data[key] = tuple(guidance_data[key])
    guidance = _build_section(GuidanceConfig, guidance_data, "guidance")
    schedule = _build_section(ScheduleParams, dict(data.get("schedule", {})), "schedule")
    seeds = data.get("seeds", [0])
    if (
        not isinstance(seeds, list)
        or not seeds
        or not all(isinstance(s, int) for s in seeds)
    ):
        raise ConfigError("'seeds' must be a nonempty list of integers")
    target = data.get("target")
    if target is not None:
        if not isinstance(target, dict):
            raise ConfigError("'target' must be an object or null")
        if not ({"template_index"} == set(target) or
                {"class", "orientation_deg", "center"} == set(target)):
            raise ConfigError(
                "'target' needs either template_index or class/orientation_deg/center"
            )
    workers = data.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("'workers' must be a positive integer")
    return RunConfig(
        world=world,
        guidance=guidance,
        schedule=schedule,
        seeds=tuple(seeds),
        target=target,
        out_dir=str(data.get("out_dir", "out")),
        workers=workers,
    )


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return run_config_from_dict(data)


def resolved_config_dict(cfg: RunConfig) -> dict:
    return {
        "world": dataclasses.asdict(cfg.world),
        "guidance": dataclasses.asdict(cfg.guidance),
        "schedule": dataclasses.asdict(cfg.schedule),
        "seeds": list(cfg.seeds),
        "target": cfg.target,
        "out_dir": cfg.out_dir,
        "workers": cfg.workers,
    }


def write_pgm(path, grid) -> None:
    """8-bit binary PGM; values are clipped to [0, 1] and rounded half-up."""
    g = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    v = np.floor(g * 255.0 + 0.5).astype(np.uint8)
    h, w = v.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(v.tobytes())


def _resolve_target(world, target) -> int:
    if target is None:
        return None
    if "template_index" in target:
        idx = int(target["template_index"])
        if not 0 <= idx < world.n_templates():
            raise ConfigError(f"target template_index {idx} out of range")
        return idx
    return find_template_index(
        world,
        str(target["class"]),
        math.radians(float(target["orientation_deg"])),
        tuple(target["center"]),
    )


def _run_seed(world, scribbles, cfg: RunConfig, schedule, target_index, seed, out_dir):
    seed_dir = os.path.join(out_dir, f"seed_{seed:04d}")
    os.makedirs(seed_dir, exist_ok=True)
    result = guided_sample(world, scribbles, cfg.guidance, schedule, Rng(seed))
    decode = decode_final(world, result.x0, schedule)
    tgt = target_index if target_index is not None else infer_target_index(world, scribbles)
    report = evaluate_sample(world, scribbles, decode, tgt)
    write_pgm(os.path.join(seed_dir, "final.pgm"), result.x0)
    diag = {
        "seed": seed,
        "decoded_template": decode.template_index,
        "target_template": tgt,
        "steps": [dataclasses.asdict(d) for d in result.diagnostics],
    }
    with open(os.path.join(seed_dir, "diagnostics.json"), "w") as fh:
        json.dump(diag, fh, indent=1)
    with open(os.path.join(seed_dir, "report.json"), "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1)
    return report


@functools.lru_cache(maxsize=2)
def _cached_world(spec_json: str):
    return build_world(WorldSpec(**_decode_world_kwargs(json.loads(spec_json))))


def _decode_world_kwargs(data: dict) -> dict:
    out = dict(data)
    out["classes"] = tuple(out["classes"])
    out["orientations_deg"] = tuple(out["orientations_deg"])
    out["centers"] = tuple(tuple(p) for p in out["centers"])
    out["axes"] = tuple(out["axes"])
    if out.get("priors") is not None:
        out["priors"] = tuple(out["priors"])
    return out


def _pool_seed_job(args):
    config_json, scribble_json, seed, out_dir = args
    cfg = run_config_from_dict(json.loads(config_json))
    world = _cached_world(json.dumps(dataclasses.asdict(cfg.world), sort_keys=True))
    scribbles = load_scribble_set_from_json(scribble_json)
    schedule = make_schedule(
        cfg.schedule.n_train, cfg.schedule.beta_start, cfg.schedule.beta_end,
        cfg.schedule.n_inference,
    )
    target_index = _resolve_target(world, cfg.target)
    _run_seed(world, scribbles, cfg, schedule, target_index, seed, out_dir)
    return seed


def load_scribble_set_from_json(text: str) -> ScribbleSet:
    from .scribble import scribble_set_from_dict

    return scribble_set_from_dict(json.loads(text))


def run_generate(cfg: RunConfig, scribbles: ScribbleSet, out_dir=None) -> int:
    out_dir = out_dir or cfg.out_dir
    world = build_world(cfg.world)
    if (scribbles.height, scribbles.width) != (world.resolution, world.resolution):
        raise ConfigError(
            f"scribble canvas {scribbles.width}x{scribbles.height} does not match "
            f"world resolution {world.resolution}"
        )
    for tok in scribbles.tokens():
        if tok not in world.class_templates:
            raise ConfigError(
                f"scribble token {tok!r} not in world classes {cfg.world.classes}"
            )
    schedule = make_schedule(
        cfg.schedule.n_train, cfg.schedule.beta_start, cfg.schedule.beta_end,
        cfg.schedule.n_inference,
    )
    target_index = _resolve_target(world, cfg.target)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(resolved_config_dict(cfg), fh, indent=1)
    if cfg.workers > 1:
        config_json = json.dumps(resolved_config_dict(cfg))
        scribble_json = json.dumps(_scribble_set_to_dict(scribbles))
        jobs = [(config_json, scribble_json, s, out_dir) for s in cfg.seeds]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(_pool_seed_job, jobs))
    else:
        for seed in cfg.seeds:
            _run_seed(world, scribbles, cfg, schedule, target_index, seed, out_dir)
    return 0


def _scribble_set_to_dict(s: ScribbleSet) -> dict:
    return {
        "width": s.width,
        "height": s.height,
        "scribbles": [
            {
                "tokens": list(sc.tokens),
                "kind": sc.geometry.kind,
                "points": [list(p) for p in sc.geometry.points],
                "thickness": sc.geometry.thickness,
            }
            for sc in s.scribbles
        ],
    }


def _max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def _fd_grad(fn, a: np.ndarray, step: float = 1e-4) -> np.ndarray:
    out = np.zeros_like(a)
    it = np.nditer(a, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = a[idx]
        a[idx] = orig + step
        hi = fn()
        a[idx] = orig - step
        lo = fn()
        a[idx] = orig
        out[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return out


def _random_check_instance(rng: np.random.Generator, n: int, guidance: GuidanceConfig):
    """A random activation map + scribble set for the attention-space check."""
    x0, y0 = rng.integers(1, n - 1, size=2)
    x1, y1 = rng.integers(1, n - 1, size=2)
    if (x0, y0) == (x1, y1):
        x1 = (x1 + 3) % (n - 2) + 1
    geom = ScribbleGeometry(
        kind="polyline",
        points=((float(x0), float(y0)), (float(x1), float(y1))),
        thickness=int(rng.integers(1, 4)),
    )
    mask = rasterize(geom, n, n)
    scribbles = ScribbleSet(n, n, (Scribble(geom, ("tok",), mask),))
    amap = rng.normal(0.0, 2.0, size=(n, n))
    return amap, scribbles


def run_gradcheck(cfg: RunConfig, corrupt: bool = False, n_instances: int = 20) -> int:
    """Verify analytic gradients against central finite differences.

    Attention-space: grad of the combined loss w.r.t. random activation maps,
    tolerance 1e-4. Latent-space: the chained gradient through the toy world's
    attention maps, tolerance 1e-3. Prints one line per component; exit 0/1.
    """
    rng = np.random.default_rng(20240817)
    guidance = cfg.guidance
    worst = {"focal": 0.0, "moment": 0.0, "total": 0.0}
    for _ in range(n_instances):
        amap, scribbles = _random_check_instance(rng, 16, guidance)
        variants = {
            "focal": dataclasses.replace(guidance, w_moment=0.0),
            "moment": dataclasses.replace(guidance, w_focal=0.0),
            "total": guidance,
        }
        for name, g_cfg in variants.items():
            maps = {"tok": amap}
            analytic = grad_cross_loss(maps, scribbles, g_cfg)["tok"]
            if corrupt:
                analytic = analytic * 1.01 + 1e-6
            numeric = _fd_grad(
                lambda: cross_loss({"tok": amap}, scribbles, g_cfg).total, amap
            )
            worst[name] = max(worst[name], _max_rel_error(analytic, numeric))

    # chained latent gradient on a small world
    spec = WorldSpec(
        resolution=16,
        classes=("tok",),
        orientations_deg=(0.0, 60.0, 120.0),
        centers=((8.0, 8.0),),
        axes=(3.0, 1.2),
    )
    world = build_world(spec)
    schedule = make_schedule(
        cfg.schedule.n_train, cfg.schedule.beta_start, cfg.schedule.beta_end,
        cfg.schedule.n_inference,
    )
    t_mid = schedule.inference_steps[len(schedule.inference_steps) // 2]
    geom = ScribbleGeometry(kind="polyline", points=((4.0, 8.0), (12.0, 8.0)))
    scribbles = ScribbleSet(16, 16, (Scribble(geom, ("tok",), rasterize(geom, 16, 16)),))
    x = rng.normal(0.0, 1.0, size=(16, 16))

    def latent_loss():
        amap, _ = cross_attention_map(world, x, schedule, t_mid, "tok")
        return cross_loss({"tok": amap}, scribbles, guidance).total

    amap, contraction = cross_attention_map(world, x, schedule, t_mid, "tok")
    g_map = grad_cross_loss({"tok": amap}, scribbles, guidance)["tok"]
    analytic_latent = contraction(g_map)
    if corrupt:
        analytic_latent = analytic_latent * 1.01 + 1e-6
    numeric_latent = _fd_grad(latent_loss, x)
    latent_err = _max_rel_error(analytic_latent, numeric_latent)

    ok = True
    for name in ("focal", "moment", "total"):
        passed = worst[name] <= GRAD_TOL_ATTENTION
        ok = ok and passed
        print(
            f"gradcheck attention/{name}: max rel error {worst[name]:.3e} "
            f"(tol {GRAD_TOL_ATTENTION:.0e}) {'ok' if passed else 'FAIL'}"
        )
    passed = latent_err <= GRAD_TOL_LATENT
    ok = ok and passed
    print(
        f"gradcheck latent/chained: max rel error {latent_err:.3e} "
        f"(tol {GRAD_TOL_LATENT:.0e}) {'ok' if passed else 'FAIL'}"
    )
    return 0 if ok else 1


def _aggregate_reports(directory) -> dict:
    paths = []
    for root, _dirs, files in os.walk(directory):
        for name in files:
            if name == "report.json":
                paths.append(os.path.join(root, name))
    if not paths:
        raise ConfigError(f"no report.json files under {directory}")
    reports = []
    for path in sorted(paths):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        try:
            reports.append(report_from_dict(data))
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    per_scribble_means = [
        float(np.mean([p["ratio"] for p in r.per_scribble])) for r in reports
    ]
    return {
        "n_runs": len(reports),
        "scribble_ratio": float(np.mean([r.scribble_ratio for r in reports])),
        "scribble_ratio_per_scribble_mean": float(np.mean(per_scribble_means)),
        "miou": float(np.mean([r.miou for r in reports])),
        "orientation_error_deg": float(
            np.mean([r.orientation_error_deg for r in reports])
        ),
    }


def run_evaluate(directory, second=None) -> int:
    result = _aggregate_reports(directory)
    if second is not None:
        result = {"first": result, "second": _aggregate_reports(second)}
    json.dump(result, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scribbleguide",
        description="Scribble-guided diffusion sampling on an analytic toy world.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="sample with scribble guidance")
    p_gen.add_argument("--config", required=True, help="run config JSON")
    p_gen.add_argument("--scribbles", required=True, help="scribble JSON")
    p_gen.add_argument("--out", default=None, help="output directory (overrides config)")

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_grad.add_argument("--config", required=True, help="run config JSON")
    p_grad.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p_eval = sub.add_parser("evaluate", help="aggregate run reports")
    p_eval.add_argument("directory", help="run output directory")
    p_eval.add_argument("second", nargs="?", default=None, help="optional second directory")

    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            cfg = load_run_config(args.config)
            scribbles = load_scribble_set(args.scribbles)
            return run_generate(cfg, scribbles, out_dir=args.out)
        if args.command == "gradcheck":
            cfg = load_run_config(args.config)
            return run_gradcheck(cfg, corrupt=args.corrupt)
        if args.command == "evaluate":
            return run_evaluate(args.directory, args.second)
        raise ConfigError(f"unknown command {args.command!r}")
    except GuidanceBlowupError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        for d in exc.diagnostics[-3:]:
            print(
                f"  step {d.step} t={d.t} total={d.total:.4g} "
                f"latent_max_abs={d.latent_max_abs:.4g}",
                file=sys.stderr,
            )
        return 3
    except (ConfigError, ScribbleFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
