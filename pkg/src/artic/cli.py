"""Command line harness: run, validate, fk, render, add.

Exit codes: 0 success (validate: within tolerance), 2 missing file,
3 model outside the validation oracle's domain, 4 config or schema
violation, 5 empty observation, 1 validation gap above tolerance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .baseline import run_pf
from .config import ConfigError, load_config
from .geometry import dq_from_pose, dq_to_pose
from .gridbp import (
    ChainOracleError,
    GridSpec,
    chain_coordinate,
    chain_pose,
    grid_bp,
    marginals_to_csv,
    validate_chain,
)
from .metrics import model_points, add_metric, results_to_csv
from .model import ModelError, build_mrf, forward_kinematics
from .observation import (
    EmptyObservationError,
    ObservationError,
    render_scene,
    write_xyz,
)
from .pmpnbp import run_inference
from .potentials import ObservationIndex

EXIT_FILE_NOT_FOUND = 2
EXIT_NOT_CHAIN = 3
EXIT_SCHEMA = 4
EXIT_EMPTY_OBS = 5


def atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def format_pose(pose7):
    return " ".join(f"{v:.9g}" for v in np.asarray(pose7, dtype=float))


def write_pose_file(poses):
    """{part id: dual quaternion} to 'id x y z qw qx qy qz' lines."""
    lines = [f"{pid} {format_pose(dq_to_pose(dq))}" for pid, dq in poses.items()]
    return "\n".join(lines) + "\n"


def read_pose_file(text):
    poses = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 8:
            raise ObservationError(
                f"pose line {lineno}: expected 'id' plus 7 numbers, got {len(fields)} fields"
            )
        poses[fields[0]] = dq_from_pose([float(f) for f in fields[1:]])
    if not poses:
        raise ObservationError("no poses in file")
    return poses


def resolve_threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ARTIC_THREADS")
    return int(env) if env else 1


def _prepare(args):
    config, doc = load_config(args.config, args.set)
    if args.out:
        config = replace(config, out_dir=args.out)
    model = config.load_model()
    return config, doc, model


def _log_line(run_id, method, rec):
    body = {"run_id": run_id, "method": method}
    body.update(rec)
    return json.dumps(body, sort_keys=True)


def cmd_run(args):
    config, doc, model = _prepare(args)
    points, gt_poses, _ = render_scene(model, config.scene)
    index = ObservationIndex(points, workers=resolve_threads(args))
    graph = build_mrf(model)
    os.makedirs(config.out_dir, exist_ok=True)

    rows, log_lines = [], []
    summary = {}
    for run in range(config.runs):
        run_id = f"run{run}"
        if config.method in ("pmpnbp", "both"):
            params = replace(config.inference, seed=config.inference.seed + run)
            result = run_inference(graph, index, params, gt_poses)
            for rec in result.records:
                rows.append((run_id, rec["iteration"], rec["node"], rec["add_m"], "pmpnbp"))
                log_lines.append(_log_line(run_id, "pmpnbp", rec))
            _dump_snapshots(config, run_id, result)
            _accumulate(summary, "pmpnbp", result.records)
            est_path = os.path.join(config.out_dir, f"estimates_{run_id}.txt")
            atomic_write(est_path, write_pose_file(result.estimates))
        if config.method in ("pf", "both"):
            pf_params = replace(config.pf, seed=config.pf.seed + run)
            pf_result = run_pf(model, index, pf_params, gt_poses)
            for rec in pf_result.records:
                rows.append((run_id, rec["iteration"], rec["node"], rec["add_m"], "pf"))
                log_lines.append(_log_line(run_id, "pf", rec))
            _accumulate(summary, "pf", pf_result.records)

    atomic_write(os.path.join(config.out_dir, "results.csv"), results_to_csv(rows))
    atomic_write(os.path.join(config.out_dir, "run_log.jsonl"), "\n".join(log_lines) + "\n")
    atomic_write(
        os.path.join(config.out_dir, "config.resolved.json"),
        json.dumps(doc, indent=2, sort_keys=True) + "\n",
    )
    atomic_write(
        os.path.join(config.out_dir, "summary.json"),
        json.dumps(_summarize(summary), indent=2, sort_keys=True) + "\n",
    )
    from .report import convergence_figure

    convergence_figure(rows, list(model.parts), os.path.join(config.out_dir, "convergence.png"))
    print(f"wrote {config.out_dir}/results.csv ({len(rows)} rows)")
    return 0


def _dump_snapshots(config, run_id, result):
    if not result.snapshots:
        return
    snap_dir = os.path.join(config.out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    for iteration, beliefs in result.snapshots.items():
        for node, poses in beliefs.items():
            lines = "\n".join(format_pose(p) for p in dq_to_pose(poses)) + "\n"
            atomic_write(os.path.join(snap_dir, f"{run_id}_iter{iteration:03d}_{node}.txt"), lines)


def _accumulate(summary, method, records):
    last_iter = max(r["iteration"] for r in records)
    for rec in records:
        slot = summary.setdefault(method, {}).setdefault(
            rec["node"], {"iter0": [], "final": [], "certain": []},
        )
        if rec["iteration"] == 0 and "add_m" in rec:
            slot["iter0"].append(rec["add_m"])
        if rec["iteration"] == last_iter:
            if "add_m" in rec:
                slot["final"].append(rec["add_m"])
            if "certain" in rec:
                slot["certain"].append(bool(rec["certain"]))
    return summary


def _summarize(summary):
    out = {}
    for method, parts in summary.items():
        out[method] = {}
        for part, slot in parts.items():
            entry = {}
            if slot["final"]:
                entry["final_add_median"] = float(np.median(slot["final"]))
            if slot["iter0"]:
                entry["iter0_add_median"] = float(np.median(slot["iter0"]))
            if slot["certain"]:
                entry["certain_fraction"] = float(np.mean(slot["certain"]))
            out[method][part] = entry
    return out


def cmd_validate(args):
    config, doc, model = _prepare(args)
    graph = build_mrf(model)
    axis, zero_poses = validate_chain(model)
    points, gt_poses, _ = render_scene(model, config.scene)
    index = ObservationIndex(points, workers=resolve_threads(args))
    os.makedirs(config.out_dir, exist_ok=True)

    vset = config.validate
    proj = points @ axis
    grids = {}
    for node in graph.nodes:
        offset = float(np.asarray(dq_to_pose(zero_poses[node]))[:3] @ axis)
        grids[node] = GridSpec(
            proj.min() - offset - vset.grid_pad,
            proj.max() - offset + vset.grid_pad,
            vset.bins,
        )
    oracle = grid_bp(graph, index, grids, config.inference.unary,
                     config.inference.pairwise, vset.iterations)
    atomic_write(os.path.join(config.out_dir, "marginals.csv"), marginals_to_csv(oracle))

    # Both engines should search the same hypothesis space: the oracle only
    # considers poses on the chain manifold, so the particle engine starts
    # from a pool spread along it (diffusion still explores off-manifold).
    manifold = {
        node: chain_pose(zero_poses[node], axis,
                         np.linspace(grids[node].lo, grids[node].hi, 512))
        for node in graph.nodes
    }

    coords = {node: [] for node in graph.nodes}
    gaps = {node: [] for node in graph.nodes}
    seed_pass = []
    for run in range(config.runs):
        params = replace(config.inference, seed=config.inference.seed + run,
                         prior_poses=manifold)
        result = run_inference(graph, index, params, gt_poses)
        ok = True
        for node in graph.nodes:
            c = chain_coordinate(result.beliefs[node].poses, zero_poses[node], axis)
            coords[node].append(c)
            gap = abs(float(c.mean()) - oracle.means[node])
            gaps[node].append(gap)
            tol = max(vset.tolerance_cells * grids[node].width, vset.tolerance_abs)
            ok = ok and gap <= tol
        seed_pass.append(ok)

    passed = sum(seed_pass) >= vset.pass_fraction * config.runs
    report = {
        "axis": axis.tolist(),
        "grid_bins": vset.bins,
        "grid_means": oracle.means,
        "pmpnbp_means": {n: [float(np.mean(c)) for c in coords[n]] for n in graph.nodes},
        "gaps": gaps,
        "tolerance": {
            n: max(vset.tolerance_cells * grids[n].width, vset.tolerance_abs)
            for n in graph.nodes
        },
        "seeds_passed": int(sum(seed_pass)),
        "runs": config.runs,
        "pass": bool(passed),
        "warnings": oracle.warnings,
    }
    atomic_write(
        os.path.join(config.out_dir, "validate.json"),
        json.dumps(report, indent=2, sort_keys=True) + "\n",
    )
    from .report import marginals_figure

    marginals_figure(oracle, coords, os.path.join(config.out_dir, "marginals.png"))
    for warning in oracle.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"validate: {sum(seed_pass)}/{config.runs} seeds within tolerance "
          f"-> {'pass' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_fk(args):
    config, doc, model = _prepare(args)
    root = dq_from_pose(np.asarray(config.scene.root_pose, dtype=float))
    poses = forward_kinematics(model, config.scene.joint_config, root_pose=root)
    text = write_pose_file(poses)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        atomic_write(os.path.join(args.out, "poses.txt"), text)
    sys.stdout.write(text)
    return 0


def cmd_render(args):
    config, doc, model = _prepare(args)
    points, gt_poses, labels = render_scene(model, config.scene)
    os.makedirs(config.out_dir, exist_ok=True)
    atomic_write(
        os.path.join(config.out_dir, "cloud.xyz"),
        write_xyz(points, comment=f"{len(points)} points, seed {config.scene.seed}"),
    )
    atomic_write(os.path.join(config.out_dir, "gt_poses.txt"), write_pose_file(gt_poses))
    atomic_write(
        os.path.join(config.out_dir, "scene.resolved.json"),
        json.dumps(config.scene.to_json(), indent=2, sort_keys=True) + "\n",
    )
    print(f"wrote {config.out_dir}/cloud.xyz ({len(points)} points)")
    return 0


def cmd_add(args):
    config, doc, model = _prepare(args)
    with open(args.est) as fh:
        est = read_pose_file(fh.read())
    with open(args.gt) as fh:
        gt = read_pose_file(fh.read())
    shared = [pid for pid in model.parts if pid in est and pid in gt]
    if not shared:
        raise ConfigError("pose files share no part ids with the model")
    values = []
    for pid in shared:
        value = add_metric(est[pid], gt[pid], model_points(model.parts[pid]))
        values.append(value)
        print(f"{pid} {value:.9g}")
    print(f"mean {float(np.mean(values)):.9g}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="artic",
        description="Articulated-object pose estimation from point clouds",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "run": (cmd_run, "run inference per the config and write results"),
        "validate": (cmd_validate, "compare particle marginals against the grid oracle"),
        "fk": (cmd_fk, "print part poses for the configured joint values"),
        "render": (cmd_render, "render the configured scene to an XYZ cloud"),
        "add": (cmd_add, "mean point-displacement error between two pose files"),
    }
    for name, (func, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted path, JSON value)")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--threads", type=int, default=None,
                       help="nearest-neighbor query threads (or ARTIC_THREADS)")
        if name == "add":
            p.add_argument("--est", required=True, help="estimated pose file")
            p.add_argument("--gt", required=True, help="ground-truth pose file")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_FILE_NOT_FOUND
    except ChainOracleError as exc:
        print(f"error: oracle requires 1-DOF chain: {exc}", file=sys.stderr)
        return EXIT_NOT_CHAIN
    except EmptyObservationError as exc:
        print(f"error: empty observation: {exc}", file=sys.stderr)
        return EXIT_EMPTY_OBS
    except (ConfigError, ModelError, ObservationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
