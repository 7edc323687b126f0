#!/usr/bin/env python3
"""Regenerate the demo config and scribble files under configs/.

The scribble is a straight stroke through the canvas center along the target
orientation, so the guided run has a template it can plausibly reach.
"""

import argparse
import json
import math
import os


def demo_config(orientation_deg: float, out_dir: str) -> dict:
    centers = [[float(x), float(y)] for x in (8, 16, 24) for y in (8, 16, 24)]
    return {
        "world": {
            "resolution": 32,
            "classes": ["dog"],
            "orientations_deg": [0.0, 30.0, 60.0, 90.0, 120.0, 150.0],
            "centers": centers,
            "axes": [6.0, 2.0],
            "s_logit": 10.0,
            "h": 0.05,
        },
        "guidance": {
            "alpha": 0.25,
            "beta": 2.0,
            "lambda1": 0.6,
            "lambda2": 0.6,
            "w_focal": 5.0,
            "w_moment": 3.0,
            "guidance_scale": 2.0,
            "shift_clip": 3.0,
            "omega": 1.0,
            "eta_ddim": 0.0,
            "tau": 0.001,
            "top_k": 20,
            "k1": 5,
            "k2": 15,
            "agg_resolutions": [8, 16, 32],
        },
        "schedule": {
            "n_train": 1000,
            "beta_start": 1e-4,
            "beta_end": 0.02,
            "n_inference": 50,
        },
        "seeds": [0, 1, 2, 3],
        "target": {
            "class": "dog",
            "orientation_deg": orientation_deg,
            "center": [16.0, 16.0],
        },
        "out_dir": out_dir,
        "workers": 1,
    }


def demo_scribbles(orientation_deg: float, half_length: float = 6.0) -> dict:
    theta = math.radians(orientation_deg)
    cx = cy = 16.0
    dx, dy = math.cos(theta), math.sin(theta)
    p0 = [round(cx - half_length * dx, 4), round(cy - half_length * dy, 4)]
    p1 = [round(cx + half_length * dx, 4), round(cy + half_length * dy, 4)]
    return {
        "width": 32,
        "height": 32,
        "scribbles": [
            {"tokens": ["dog"], "kind": "polyline", "points": [p0, p1], "thickness": 1}
        ],
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--orientation-deg", type=float, default=60.0)
    parser.add_argument("--out-dir", default="out/demo")
    parser.add_argument("--configs-dir", default="configs")
    args = parser.parse_args()

    os.makedirs(args.configs_dir, exist_ok=True)
    with open(os.path.join(args.configs_dir, "demo_config.json"), "w") as fh:
        json.dump(demo_config(args.orientation_deg, args.out_dir), fh, indent=1)
        fh.write("\n")
    with open(os.path.join(args.configs_dir, "demo_scribbles.json"), "w") as fh:
        json.dump(demo_scribbles(args.orientation_deg), fh, indent=1)
        fh.write("\n")
    print(f"wrote demo config and scribbles to {args.configs_dir}/")


if __name__ == "__main__":
    main()
