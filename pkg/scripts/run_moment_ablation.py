#!/usr/bin/env python3
"""Paired moment-guidance ablation: same seeds with and without the moment terms.

Prints per-arm mean orientation error and the per-seed deltas, and optionally
dumps the raw numbers as JSON.
"""

import argparse
import json

import numpy as np

from scribbleguide import (
    GuidanceConfig,
    build_world,
    default_world_spec,
    make_schedule,
    run_paired_moment_experiment,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=64)
    parser.add_argument("--n-inference", type=int, default=50)
    parser.add_argument("--json-out", default=None)
    args = parser.parse_args()

    world = build_world(default_world_spec())
    schedule = make_schedule(1000, 1e-4, 0.02, args.n_inference)
    cfg = GuidanceConfig()
    result = run_paired_moment_experiment(world, schedule, cfg, n_seeds=args.seeds)

    on = np.asarray(result["errors_on"])
    off = np.asarray(result["errors_off"])
    print(f"seeds: {args.seeds}")
    print(f"mean orientation error, moments on : {on.mean():8.3f} deg")
    print(f"mean orientation error, moments off: {off.mean():8.3f} deg")
    print(f"improvement (off - on)             : {off.mean() - on.mean():8.3f} deg")
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(
                {k: (list(v) if isinstance(v, (list, tuple)) else v)
                 for k, v in result.items()},
                fh, indent=1,
            )
        print(f"wrote {args.json_out}")


if __name__ == "__main__":
    main()
