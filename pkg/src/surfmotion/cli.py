"""Command-line driver: one subcommand per pipeline stage.

Every run writes ``manifest.json`` into its output directory with the
sha256 of each produced file. Exit codes: 0 success, 1 usage or input
error, 2 numerical failure.
"""

import argparse
import copy
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io

logger = logging.getLogger("surfmotion")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class PipelineConfig:
    """All stage parameters of a run; defaults follow the published settings."""

    paths: dict = field(default_factory=dict)
    feature: dict = field(default_factory=lambda: {
        "radius_factor": 0.8, "iterations": 200, "tol": 1e-5, "init": "zero", "erosion_passes": 1})
    lddmm: dict = field(default_factory=lambda: {
        "kernel_width": 8.0, "time_steps": 15, "regularization": 1e-8, "max_iter": 50, "tol": 1e-7})
    simulate: dict = field(default_factory=lambda: {
        "model": "sag", "amplitude": 0.25, "frames_per_half": 4, "cycles": 8, "smooth_sigma": 0.8,
        "phantom": {"semi_axes": [20.0, 17.0, 15.0], "n_bumps": 20, "bump_amplitude": 0.041,
                    "bump_width": 0.225, "subdiv": 12, "margin": 10}})
    mesh: dict = field(default_factory=lambda: {"shape": "sphere", "subdiv": 8, "size": [1.0, 1.0, 1.0]})
    analysis: dict = field(default_factory=lambda: {"grid_level": 4, "n_candidates": 6})
    seed: int = 49

    _SECTIONS = ("paths", "feature", "lddmm", "simulate", "mesh", "analysis")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - set(cls._SECTIONS) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        for sec in cls._SECTIONS:
            if sec in d:
                if not isinstance(d[sec], dict):
                    raise UsageError(f"config section {sec!r} must be a mapping")
                merged = copy.deepcopy(getattr(cfg, sec))
                bad = set(d[sec]) - set(merged) if sec != "paths" else set()
                if bad:
                    raise UsageError(f"unknown keys in section {sec!r}: {sorted(bad)}")
                merged.update(d[sec])
                setattr(cfg, sec, merged)
        cfg.seed = int(d.get("seed", cfg.seed))
        return cfg

    def to_dict(self):
        return asdict(self)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(yaml.safe_load(Path(path).read_text()))
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


class Run:
    """Tracks files written by a stage; removes them if the stage fails."""

    def __init__(self, out, cfg, command):
        self.out = Path(out)
        self.cfg = cfg
        self.command = command
        self.files = []

    def path(self, rel):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def finish(self):
        self.cfg.dump(self.path("config.yaml"))
        entries = {str(p.relative_to(self.out)): io.sha256(p) for p in sorted(set(self.files))}
        io.write_json(self.out / "manifest.json", {"command": self.command, "files": entries})

    def abort(self):
        for p in self.files:
            p.unlink(missing_ok=True)
        # prune directories left empty, deepest first
        if self.out.is_dir():
            for d in sorted((p for p in self.out.rglob("*") if p.is_dir()), key=lambda p: -len(p.parts)):
                if not any(d.iterdir()):
                    d.rmdir()
            if not any(self.out.iterdir()):
                self.out.rmdir()


def _need(cfg, key):
    val = cfg.paths.get(key)
    if val is None:
        raise UsageError(f"paths.{key} is required for this command")
    if isinstance(val, list):
        missing = [v for v in val if not Path(v).exists()]
    else:
        missing = [] if Path(val).exists() else [val]
    if missing:
        raise UsageError(f"missing input(s): {missing}")
    return val


# ---------------------------------------------------------------------------
# stages


def cmd_feature(cfg, run):
    from .geodesic import geodesic_feature, sample_on_vertices
    from .volgrid import marching_cubes, smooth

    mask = io.read_nrrd(_need(cfg, "mask"))
    if not mask.is_binary():
        raise UsageError("mask must be binary")
    f = cfg.feature
    labels, hf, flow, lengths, fmap = geodesic_feature(
        mask, radius_factor=f["radius_factor"], iters=f["iterations"], tol=f["tol"], init=f["init"],
        erosion_passes=f["erosion_passes"])
    io.write_nrrd(run.path("feature.nrrd"), fmap.grid.with_data(np.nan_to_num(fmap.values)))
    if cfg.paths.get("mesh"):
        mesh = io.read_obj(_need(cfg, "mesh"))
    else:
        mesh = marching_cubes(smooth(mask, 0.8), 0.5)
        io.write_obj(run.path("surface.obj"), mesh)
    vals = sample_on_vertices(fmap, mesh)
    io.write_vertex_csv(run.path("feature_vertices.csv"), vals, header="feature")
    io.write_json(run.path("feature.json"), {
        "radius": labels.radius, "sweeps": hf.iterations_run, "final_ratio": hf.final_ratio,
        "n_vertices": int(len(vals)), "mean": float(vals.mean()), "std": float(vals.std())})


def cmd_mesh_gen(cfg, run):
    from . import mesh as M

    m = cfg.mesh
    shape = m["shape"]
    size = m.get("size", [1.0, 1.0, 1.0])
    if shape == "sphere":
        mesh = M.make_quad_sphere(int(m["subdiv"]), radius=float(size[0]))
    elif shape == "ellipsoid":
        mesh = M.make_quad_ellipsoid(*[float(s) for s in size[:3]], subdiv=int(m["subdiv"]))
    elif shape == "torus":
        mesh = M.make_quad_torus(float(size[0]), float(size[1]))
    elif shape == "icosphere":
        mesh = M.make_icosphere(int(m["subdiv"]), radius=float(size[0]))
    elif shape == "phantom":
        from .simulate import organ_phantom

        mask, mesh = organ_phantom(seed=cfg.seed, **cfg.simulate["phantom"])
        io.write_nrrd(run.path("phantom_mask.nrrd"), mask)
    else:
        raise UsageError(f"unknown shape {shape!r}")
    io.write_obj(run.path(f"{shape}.obj"), mesh)
    io.write_json(run.path("mesh.json"), {"shape": shape, "n_vertices": mesh.n_vertices,
                                          "n_faces": mesh.n_faces,
                                          "euler_characteristic": mesh.euler_characteristic()})


def cmd_simulate(cfg, run):
    from . import simulate as S

    s = cfg.simulate
    if cfg.paths.get("mask"):
        mask = io.read_nrrd(_need(cfg, "mask"))
        mesh = io.read_obj(_need(cfg, "mesh"))
    else:
        mask, mesh = S.organ_phantom(seed=cfg.seed, **s["phantom"])
    if s["model"] == "sag":
        model = S.sag_model(mask, s["amplitude"])
    elif s["model"] == "breathing":
        model = S.breathing_model(mask, s["amplitude"])
    else:
        raise UsageError(f"unknown simulation model {s['model']!r}")
    seq = S.make_cycle(model, mask, frames_per_half=int(s["frames_per_half"]), n_cycles=int(s["cycles"]),
                       mesh=mesh, smooth_sigma=s["smooth_sigma"])
    write_sequence(run, seq, mesh)


def write_sequence(run, seq, mesh):
    """Frame masks, clouds, rest mesh, ground truth and the sequence manifest."""
    from .volgrid import marching_cubes

    frames = []
    done = {}
    for t, (mask, lvl, fr) in enumerate(zip(seq.masks, seq.levels, seq.frames)):
        key = (fr.phase, round(fr.amount, 12))
        if key not in done:
            mp = f"frames/mask_{len(done):03d}.nrrd"
            cp = f"frames/cloud_{len(done):03d}.obj"
            io.write_nrrd(run.path(mp), mask)
            io.write_points_obj(run.path(cp), marching_cubes(lvl, 0.5).vertices)
            done[key] = (mp, cp)
        mp, cp = done[key]
        frames.append({"mask": mp, "cloud": cp, "phase": fr.phase, "cycle": fr.cycle, "amount": fr.amount})
    io.write_obj(run.path("rest_mesh.obj"), mesh)
    gt = run.path("ground_truth.csv")
    rows = ["frame,vertex_id,x,y,z"]
    for t, V in enumerate(seq.vertices):
        rows += [f"{t},{i},{io._fmt(p[0])},{io._fmt(p[1])},{io._fmt(p[2])}" for i, p in enumerate(V)]
    gt.write_text("\n".join(rows) + "\n")
    io.write_json(run.path("sequence.json"), {"frames": frames, "mesh": "rest_mesh.obj",
                                              "ground_truth": "ground_truth.csv", "frame_rate": 1.0,
                                              "units": "mm"})


def read_ground_truth(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    n_frames = int(data[:, 0].max()) + 1
    return data[:, 2:].reshape(n_frames, -1, 3)


def _load_sequence(manifest):
    base = Path(manifest).parent
    meta = io.read_json(manifest)
    return base, meta


def cmd_track(cfg, run):
    from .lddmm import track_sequence
    from .volgrid import marching_cubes, smooth

    base, meta = _load_sequence(_need(cfg, "sequence"))
    mesh = io.read_obj(base / meta["mesh"])
    cache = {}
    clouds = []
    for fr in meta["frames"]:
        key = fr.get("cloud") or fr["mask"]
        if key not in cache:
            if fr.get("cloud"):
                cache[key] = io.read_obj(base / fr["cloud"])
            else:
                cache[key] = marching_cubes(smooth(io.read_nrrd(base / fr["mask"]), 0.8), 0.5).vertices
        clouds.append(cache[key])
    p = cfg.lddmm
    seq = track_sequence(mesh.faces, mesh.vertices, clouds, kernel_width=p["kernel_width"],
                         time_steps=p["time_steps"], regularization=p["regularization"],
                         max_iter=p["max_iter"], tol=p["tol"],
                         progress=lambda t, r: logger.info("frame %d: residual %.4g", t, r.data_term))
    # stored relative to the output so the record does not depend on where the run happened
    rel = os.path.relpath(Path(cfg.paths["sequence"]).resolve(), run.out.resolve())
    write_tracked(run, seq, mesh, Path(rel).as_posix())


def write_tracked(run, seq, mesh, sequence_path=None):
    cls = type(mesh)
    io.write_obj(run.path("faces.obj"), cls(seq.frames[0], seq.faces))
    names = []
    for t, V in enumerate(seq.frames):
        name = f"tracked/frame_{t:03d}.obj"
        io.write_points_obj(run.path(name), V)
        names.append(name)
    io.write_json(run.path("tracked.json"), {"faces": "faces.obj", "frames": names,
                                             "residuals": list(map(float, seq.residuals)),
                                             "sequence": sequence_path, **seq.meta})


def load_tracked(path):
    from .lddmm import TrackedSequence

    path = Path(path)
    meta = io.read_json(path)
    base = path.parent
    faces = io.read_obj(base / meta["faces"]).faces
    frames = np.stack([io.read_obj(base / f) for f in meta["frames"]])
    ref = meta.get("sequence")
    return TrackedSequence(faces, frames, meta["residuals"], {"sequence": None if ref is None else str(base / ref)})


def cmd_describe(cfg, run):
    from . import descriptors as D

    seq = load_tracked(_need(cfg, "tracked"))
    masks = None
    seq_path = cfg.paths.get("sequence") or seq.meta.get("sequence")
    if seq_path and Path(seq_path).exists():
        base, meta = _load_sequence(seq_path)
        cache = {}
        masks = []
        for fr in meta["frames"]:
            if fr["mask"] not in cache:
                cache[fr["mask"]] = io.read_nrrd(base / fr["mask"])
            masks.append(cache[fr["mask"]])
        if len(masks) != seq.n_frames:
            raise UsageError("sequence and tracked frame counts differ")
    like = None
    if masks is None:
        like = io.read_nrrd(_need(cfg, "mask"))
    f = cfg.feature
    series = D.all_series(seq, masks=masks, like=like, radius_factor=f["radius_factor"], iters=f["iterations"],
                          tol=f["tol"], init=f["init"])
    for name, s in series.items():
        s.save(run.path(f"series/{name}.csv"), run.path(f"series/{name}.json"))


def _load_series(directory):
    from .descriptors import DESCRIPTORS, FeatureSeries

    d = Path(directory)
    out = {}
    for name in DESCRIPTORS:
        if (d / f"{name}.csv").exists():
            out[name] = FeatureSeries.load(d / f"{name}.csv", d / f"{name}.json")
    if not out:
        raise UsageError(f"no descriptor series found in {directory}")
    return out


def cmd_analyze(cfg, run):
    from .analysis import correlation_trajectory

    series = _load_series(_need(cfg, "series"))
    summary = {}
    for name, s in series.items():
        ct = correlation_trajectory(s)
        io.write_vertex_csv(run.path(f"correlation/{name}.csv"), ct.values, header="correlation")
        summary[name] = ct.to_dict()
    io.write_json(run.path("analysis.json"), {"descriptors": summary,
                                              "depths": {k: v["depth"] for k, v in summary.items()}})


def cmd_compare(cfg, run):
    from . import analysis as A
    from .mesh import TriMesh, quad_to_tri

    subjects = cfg.paths.get("subjects")
    if not subjects or len(subjects) < 2:
        raise UsageError("paths.subjects must list at least two subjects")
    names, series, meshes = [], [], []
    for sub in subjects:
        names.append(sub["name"])
        series.append(_load_series(_need(_Paths(sub), "series")))
        tr = load_tracked(_need(_Paths(sub), "tracked"))
        m = tr.mesh(0)
        meshes.append(m if isinstance(m, TriMesh) else quad_to_tri(m))
    common = sorted(set.intersection(*[set(s) for s in series]))
    maps = [A.lbo_spherical_map(m, cfg.analysis["n_candidates"])[0] for m in meshes]
    report = {"subjects": names, "matrices": {}}
    for name in common:
        depths = [A.correlation_trajectory(s[name]).depth for s in series]
        dm = A.depth_distance_matrix(depths, names)
        pm = A.pattern_distance_matrix([mp.with_values(A.mean_pattern(s[name])) for mp, s in zip(maps, series)],
                                       level=cfg.analysis["grid_level"], labels=names)
        io.write_matrix_csv(run.path(f"matrices/{name}_depth.csv"), dm.values, row_label="subject", col_prefix="s")
        io.write_matrix_csv(run.path(f"matrices/{name}_pattern.csv"), pm.values, row_label="subject",
                            col_prefix="s")
        report["matrices"][name] = {"depths": depths, "depth_row_means": dm.row_means().tolist(),
                                    "pattern_row_means": pm.row_means().tolist(), "pattern_flagged": pm.flagged}
    for n, mp, m in zip(names, maps, meshes):
        io.write_obj(run.path(f"spherical/{n}.obj"), TriMesh(mp.positions, m.faces))
    io.write_json(run.path("compare.json"), report)


class _Paths:
    def __init__(self, d):
        self.paths = d


def cmd_validate(cfg, run):
    from .lddmm import tracking_error

    seq = load_tracked(_need(cfg, "tracked"))
    base, meta = _load_sequence(_need(cfg, "sequence"))
    gt = read_ground_truth(base / meta["ground_truth"])
    last = meta["frames"][-1]
    cloud = io.read_obj(base / last["cloud"])
    if len(gt) != seq.n_frames:
        raise UsageError("ground truth and tracked frame counts differ")
    per_frame = np.linalg.norm(seq.frames - gt, axis=-1).mean(axis=1)
    E = tracking_error(seq.frames[-1], cloud)
    io.write_json(run.path("validation.json"), {
        "tracking_error_mm": E, "below_1mm": bool(E < 1.0),
        "ground_truth_error_mm": per_frame.tolist(), "max_ground_truth_error_mm": float(per_frame.max())})


COMMANDS = {
    "feature": (cmd_feature, "mask -> geodesic feature map and per-vertex CSV"),
    "mesh-gen": (cmd_mesh_gen, "synthetic quad meshes"),
    "track": (cmd_track, "sequence manifest -> tracked mesh sequence"),
    "describe": (cmd_describe, "tracked sequence -> descriptor series"),
    "simulate": (cmd_simulate, "mask or phantom -> cyclic polyaffine sequence with ground truth"),
    "analyze": (cmd_analyze, "descriptor series -> correlation trajectories and depths"),
    "compare": (cmd_compare, "several subjects -> distance matrices and spherical maps"),
    "validate": (cmd_validate, "tracked sequence vs ground truth -> error report"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="surfmotion", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("-c", "--config", help="YAML configuration file")
        s.add_argument("-o", "--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, help="random seed (overrides the config)")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (YAML syntax), repeatable")
        s.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def _apply_overrides(cfg, items):
    d = cfg.to_dict()
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"bad override {item!r}, expected SECTION.KEY=VALUE")
        key, val = item.split("=", 1)
        sec, k = key.split(".", 1)
        if sec not in d or not isinstance(d[sec], dict):
            raise UsageError(f"unknown config section {sec!r}")
        d[sec][k] = yaml.safe_load(val)
    return PipelineConfig.from_dict(d)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    run = None
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        cfg = _apply_overrides(cfg, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
        np.random.seed(cfg.seed)
        run = Run(args.out, cfg, args.command)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, run)
        run.finish()
    except (UsageError, FileNotFoundError, KeyError, ValueError) as exc:
        if run is not None:
            run.abort()
        print(f"surfmotion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, RuntimeError, AssertionError, np.linalg.LinAlgError) as exc:
        if run is not None:
            run.abort()
        print(f"surfmotion {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
