"""Command-line pipeline: phantom -> project -> recon -> train -> eval.

Usage::

    rhotomo <command> --config run.yaml [--seed N] [--out DIR]

Relative paths in the config's ``paths`` block resolve against ``--out``.
``{algorithm}`` in a path is replaced by the reconstruction algorithm.
Exit status: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, metrics
from .classical import cgls, fdk
from .config import RunConfig, load_config
from .errors import NumericalError, ValidationError
from .projector import ProjectionSet, add_noise, forward_project
from .trainer import TrainLog, extract_volume, render_views, train
from .volume import PRIOR_MODES, shepp_logan_3d

log = logging.getLogger("rhotomo")

ALGORITHMS = ("fdk", "cgls")


class Run:
    """A loaded config plus the directory its relative paths resolve against."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = Path(out)

    def path(self, key: str, algorithm: str | None = None) -> Path:
        raw = getattr(self.cfg.paths, key)
        raw = raw.replace("{algorithm}", algorithm or self.cfg.prior.algorithm)
        p = Path(raw)
        return p if p.is_absolute() else self.out / p

    def training_projections(self) -> Path:
        return self.path("train_projections" if self.cfg.simulation.split else "projections")


# ------------------------------------------------------------------ commands

def cmd_phantom(run: Run) -> Path:
    g = run.cfg.geometry
    vol = shepp_logan_3d(g.vol_dims, g.vol_spacing, run.cfg.phantom.supersample)
    vol.data = vol.data.astype(np.float32)
    dest = run.path("phantom")
    io.write_volume(dest, vol)
    log.info("wrote phantom %s", dest)
    return dest


def cmd_project(run: Run, volume: Path | None = None) -> list[Path]:
    sim = run.cfg.simulation
    vol = io.read_volume(volume or run.path("phantom"))
    geom = run.cfg.scan_geometry()
    proj = forward_project(vol, geom, sim.samples)
    proj = add_noise(proj, sim.noise_level, np.random.default_rng(sim.seed))
    proj = ProjectionSet(geom, proj.images.astype(np.float32))
    written = [run.path("projections")]
    io.write_projections(written[0], proj)
    if sim.split:
        train_set, test_set = proj.split_even_odd()
        io.write_projections(run.path("train_projections"), train_set)
        io.write_projections(run.path("test_projections"), test_set)
        written += [run.path("train_projections"), run.path("test_projections")]
    log.info("wrote %s", ", ".join(map(str, written)))
    return written


def _ground_truth(run: Run, path: Path | None):
    path = path or run.path("phantom")
    return io.read_volume(path) if Path(path).is_file() else None


def cmd_recon(run: Run, algorithm: str, projections: Path | None = None,
              ground_truth: Path | None = None) -> Path:
    if algorithm not in ALGORITHMS:
        raise ValidationError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    pc = run.cfg.prior
    proj = io.read_projections(projections or run.training_projections())
    if algorithm == "fdk":
        vol = fdk(proj, pc.samples)
    else:
        vol, history = cgls(proj, pc.samples, pc.iterations, pc.tol)
        io.write_csv(run.path("residuals", algorithm), ["iteration", "residual"], enumerate(history))
    vol.data = vol.data.astype(np.float32)
    dest = run.path("recon", algorithm)
    io.write_volume(dest, vol)
    gt = _ground_truth(run, ground_truth)
    if gt is not None:
        rng = metrics.data_range_of(gt.data)
        row = [run.cfg.name, algorithm, metrics.psnr(vol.data, gt.data, rng),
               metrics.ssim_volume(vol.data, gt.data, rng)]
        io.write_csv(run.path("recon_metrics", algorithm), ["case", "algo", "psnr", "ssim"], [row])
    log.info("wrote %s reconstruction %s", algorithm, dest)
    return dest


def _log_rows(trace: TrainLog, wall: bool):
    evals = {s: (p, q) for s, p, q in trace.evals}
    for step, loss, lr, ms in zip(trace.steps, trace.losses, trace.lrs, trace.wall_ms):
        yield [step, loss, lr, None, None, ms if wall else None]
        if step in evals:
            yield [step, None, None, *evals[step], None]


def _load_prior(run: Run):
    if run.cfg.prior.algorithm == "none":
        return None
    return io.read_volume(run.path("prior"))


def cmd_train(run: Run):
    cfg = run.cfg
    proj = io.read_projections(run.training_projections())
    prior = _load_prior(run)
    test = None
    if cfg.training.eval_every and run.path("test_projections").is_file():
        test = io.read_projections(run.path("test_projections"))
    model, trace = train(proj, prior, cfg.train_config(), cfg.field, proj_test=test)
    meta = {"name": cfg.name, "prior_source": cfg.prior.algorithm, "prior_mode": cfg.prior.interpolation}
    io.write_checkpoint(run.path("checkpoint"), model, proj.geom, meta)
    io.write_csv(
        run.path("train_log"),
        ["step", "loss", "lr", "eval_psnr", "eval_ssim", "wall_ms"],
        _log_rows(trace, cfg.training.log_wall_time),
    )
    log.info("trained %d steps, final loss %s", len(trace.losses), trace.losses[-1] if trace.losses else "n/a")
    return model, trace


def cmd_eval(run: Run, checkpoint: Path | None = None, test_projections: Path | None = None,
             ground_truth: Path | None = None) -> dict:
    cfg = run.cfg
    model, ck_geom, meta = io.read_checkpoint(checkpoint or run.path("checkpoint"))
    test = io.read_projections(test_projections or run.path("test_projections"))
    if not ck_geom.same_setup(test.geom):
        raise ValidationError("checkpoint geometry does not match the test projections")
    source = meta.get("prior_source", cfg.prior.algorithm)
    mode = meta.get("prior_mode", cfg.prior.interpolation)
    prior = None if source == "none" else io.read_volume(run.path("prior", source))

    m = cfg.training.eval_samples or cfg.training.samples_per_ray
    # Compare at storage precision so a checkpoint scored against its own
    # renderings is exact.
    rendered = render_views(model, prior, test.geom, m, mode).astype(np.float32)
    rows, ps, ss = [], [], []
    for i, (view, ref) in enumerate(zip(rendered, test.images)):
        rng = metrics.data_range_of(ref) or 1.0
        p, s = metrics.psnr(view, ref, rng), metrics.ssim(view, ref, rng)
        rows.append([i, float(test.angles[i]), p, s])
        ps.append(p)
        ss.append(s)
    rows.append(["mean", None, float(np.mean(ps)), float(np.mean(ss))])
    io.write_csv(run.path("eval_nvs"), ["view", "angle", "psnr", "ssim"], rows)

    vol = extract_volume(model, prior, test.geom, mode)
    vol.data = vol.data.astype(np.float32)
    io.write_volume(run.path("extracted"), vol)
    result = {"nvs_psnr": float(np.mean(ps)), "nvs_ssim": float(np.mean(ss))}
    gt = _ground_truth(run, ground_truth)
    if gt is not None:
        rng = metrics.data_range_of(gt.data)
        result["psnr"] = metrics.psnr(vol.data, gt.data, rng)
        result["ssim"] = metrics.ssim_volume(vol.data, gt.data, rng)
        algo = "baseline" if source == "none" else f"rho-{source}-{mode}"
        io.write_csv(run.path("eval_recon"), ["case", "algo", "psnr", "ssim"],
                     [[cfg.name, algo, result["psnr"], result["ssim"]]])
    if cfg.paths.slices_dir:
        sd = run.path("slices_dir")
        hi = float(gt.data.max()) if gt is not None else None
        for k in range(vol.dims[2]):
            io.write_pgm(sd / f"slice_{k:04d}.pgm", vol.data[:, :, k].T, 0.0, hi)
    log.info("eval: %s", result)
    return result


def cmd_sweep(run: Run) -> Path:
    """Prior algorithm x interpolation grid: recon, train and eval per cell."""
    rows = []
    for algorithm in ALGORITHMS:
        cmd_recon(run, algorithm)
        for mode in PRIOR_MODES:
            cfg = dataclasses.replace(
                run.cfg,
                prior=dataclasses.replace(run.cfg.prior, algorithm=algorithm, interpolation=mode),
                paths=dataclasses.replace(
                    run.cfg.paths,
                    prior=run.cfg.paths.recon,
                    checkpoint=f"sweep_{algorithm}_{mode}.ckpt",
                    train_log=f"sweep_{algorithm}_{mode}_log.csv",
                    eval_nvs=f"sweep_{algorithm}_{mode}_nvs.csv",
                    eval_recon=f"sweep_{algorithm}_{mode}_recon.csv",
                    extracted=f"sweep_{algorithm}_{mode}.hdr",
                    slices_dir=None,
                ),
            )
            cell = Run(cfg, run.out)
            _, trace = cmd_train(cell)
            res = cmd_eval(cell)
            rows.append([algorithm, mode, res.get("psnr"), res.get("ssim"),
                         res["nvs_psnr"], res["nvs_ssim"], trace.losses[-1] if trace.losses else None])
    dest = run.path("sweep")
    io.write_csv(dest, ["prior", "interpolation", "psnr", "ssim", "nvs_psnr", "nvs_ssim", "final_loss"], rows)
    return dest


# ---------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    # Usage errors are validation errors (exit 1); 2 is reserved for numerics.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(parser, defaults: bool) -> None:
    def d(value):
        return value if defaults else argparse.SUPPRESS

    parser.add_argument("--config", type=Path, default=d(None), help="run configuration (YAML or JSON)")
    parser.add_argument("--seed", type=int, default=d(None), help="override every seed in the config")
    parser.add_argument("--out", type=Path, default=d(Path(".")), help="directory for relative paths")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand.
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, defaults=False)

    parser = _Parser(prog="rhotomo", description=__doc__.splitlines()[0])
    _global_flags(parser, defaults=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("phantom", parents=[common], help="write a Shepp-Logan volume")
    p = sub.add_parser("project", parents=[common], help="simulate projections")
    p.add_argument("--volume", type=Path)
    p = sub.add_parser("recon", parents=[common], help="classical reconstruction")
    p.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    p.add_argument("--projections", type=Path)
    p.add_argument("--ground-truth", type=Path)
    sub.add_parser("train", parents=[common], help="fit the neural attenuation field")
    p = sub.add_parser("eval", parents=[common], help="novel views and volume metrics")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--test-projections", type=Path)
    p.add_argument("--ground-truth", type=Path)
    sub.add_parser("sweep", parents=[common], help="prior algorithm x interpolation ablation")
    return parser


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            raise ValidationError("--config is required")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        run = Run(cfg, args.out)
        if args.command == "phantom":
            cmd_phantom(run)
        elif args.command == "project":
            cmd_project(run, args.volume)
        elif args.command == "recon":
            algorithm = args.algorithm or (cfg.prior.algorithm if cfg.prior.algorithm != "none" else "fdk")
            cmd_recon(run, algorithm, args.projections, args.ground_truth)
        elif args.command == "train":
            cmd_train(run)
        elif args.command == "eval":
            cmd_eval(run, args.checkpoint, args.test_projections, args.ground_truth)
        elif args.command == "sweep":
            cmd_sweep(run)
    except NumericalError as exc:
        print(f"rhotomo: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, ValueError, OSError) as exc:
        print(f"rhotomo: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
