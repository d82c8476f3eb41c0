"""Command-line entry point.

Every command resolves a :class:`~pactfield.config.RunConfig` (flag > env >
config file > default), echoes it to stderr and saves it next to its outputs.
Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import (ConfigurationError, DomainError, FileFormatError, NumericalError, RasterGrid,
                   read_pgrid, write_pgrid)

log = logging.getLogger("pactfield")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

S = argparse.SUPPRESS


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", default=S, help="flat YAML config file")
    g.add_argument("--out", default=S, help="output directory")
    g.add_argument("--workers", type=int, default=S, help="thread cap (0 = all, 1 = deterministic)")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--grid-size", type=int, default=S)
    g.add_argument("--pitch", type=float, default=S)
    g.add_argument("--mask-radius", type=float, default=S)
    g.add_argument("--v0", type=float, default=S, help="beamforming / background SOS (m/s)")
    g.add_argument("--set", action="append", default=S, metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    g.add_argument("--no-figures", dest="figures", action="store_false", default=S)
    g.add_argument("-v", "--verbose", action="store_true", default=S)


def _train_flags(p):
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--steps-per-epoch", type=int, default=S)
    p.add_argument("--learning-rate", type=float, default=S)
    p.add_argument("--lambda-tv", type=float, default=S)
    p.add_argument("--delays", default=S, help="min:max:count in mm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pactfield", description="Joint PACT image and SOS reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write pressure, SOS and mask PGRIDs")
    _common(p)
    p.add_argument("--spec", default=S, help="builtin name (default, disc, twobody, empty) or YAML file")

    p = sub.add_parser("simulate", help="simulate ring-array signals for a phantom directory")
    _common(p)
    p.add_argument("--phantom", default=S, help="directory holding pressure/sos/mask PGRIDs")
    p.add_argument("--dt", type=float, default=S)

    p = sub.add_parser("recon", help="reconstruct from a SIGSET")
    p.add_argument("method", choices=["das", "dual-sos", "stack", "deconv", "nf"])
    _common(p)
    p.add_argument("--signals", default=S)
    p.add_argument("--delay", type=float, default=S)
    p.add_argument("--body-center", default=S, help="x,y in mm")
    p.add_argument("--body-radius", type=float, default=S)
    p.add_argument("--body-sos", type=float, default=S)
    p.add_argument("--sos", default=S, help="SOS PGRID for deconv")
    _train_flags(p)

    p = sub.add_parser("train", help="same as 'recon nf'")
    _common(p)
    p.add_argument("--signals", default=S)
    _train_flags(p)

    p = sub.add_parser("psf", help="PSF and wavefront dumps")
    p.add_argument("action", choices=["dump"])
    _common(p)
    p.add_argument("--sos", default=S, help="SOS PGRID (uniform v0 if omitted)")
    p.add_argument("--point", default=S, help="patch centre x,y in mm")
    p.add_argument("--delays", default=S)

    p = sub.add_parser("eval", help="benchmark methods against the phantom truth")
    _common(p)
    p.add_argument("--signals", default=S)
    p.add_argument("--phantom", default=S)
    p.add_argument("--methods", default=S, help="comma list of das,dual_sos,deconv_true_sos,nf_apact")
    p.add_argument("--save-images", action="store_true", default=False)
    _train_flags(p)
    return parser


_NOT_CONFIG = {"command", "method", "action", "config", "set", "verbose", "save_images"}


def flags_from_args(args: argparse.Namespace) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags.setdefault(k.strip().replace("-", "_"), v)
    return flags


def _set_workers(n: int) -> None:
    import numba
    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg, out: Path, command: str) -> None:
    text = cfg.dump()
    sys.stderr.write(f"# resolved config ({command})\n")
    sys.stderr.write("".join(f"#   {line}\n" for line in text.splitlines()))
    (out / f"{command}.config.yaml").write_text(text)


def _require(path: str, what: str) -> Path:
    if not path:
        raise ConfigurationError(f"missing input: {what}")
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"{what} not found: {p}")
    return p


def _load_phantom(cfg, directory: Path):
    from .phantom import Phantom
    pressure = read_pgrid(directory / "pressure.pgrid")
    sos = read_pgrid(directory / "sos.pgrid")
    if pressure.grid != sos.grid:
        raise FileFormatError(f"{directory}: pressure and SOS grids differ")
    mask = cfg.mask
    mask_file = directory / "mask.pgrid"
    if mask_file.exists():
        stored = read_pgrid(mask_file)
        if stored.grid != pressure.grid or not np.array_equal(stored.values > 0.5, mask.pixels(pressure.grid)):
            raise ConfigurationError(f"{mask_file} does not match mask_radius={cfg.mask_radius}")
    return Phantom(pressure, RasterGrid(sos.grid, sos.values.astype(float)), mask, cfg.v0)


def _signals(cfg):
    from .phantom import read_sigset
    sig = read_sigset(_require(cfg.signals, "--signals SIGSET"))
    if sig.geom.n_transducers != cfg.n_transducers or abs(sig.geom.radius - cfg.ring_radius) > 1e-9:
        log.warning("signal geometry (%d, %.2f mm) overrides config", sig.geom.n_transducers, sig.geom.radius)
    return sig


# --- commands ----------------------------------------------------------------------

def cmd_phantom(cfg, out: Path, args) -> int:
    from .phantom import generate_phantom, load_spec
    spec = load_spec(cfg.spec, cfg.mask_radius, cfg.seed)
    ph = generate_phantom(spec, cfg.grid, cfg.mask, cfg.v0)
    write_pgrid(out / "pressure.pgrid", ph.pressure)
    write_pgrid(out / "sos.pgrid", ph.sos)
    write_pgrid(out / "mask.pgrid", RasterGrid(cfg.grid, cfg.mask.pixels(cfg.grid).astype(float)))
    if cfg.figures:
        from .plotting import save_raster
        save_raster(out / "pressure.png", ph.pressure, "initial pressure")
        save_raster(out / "sos.png", ph.sos, "SOS", "viridis", "m/s")
    print("file\tkind")
    for name in ("pressure.pgrid", "sos.pgrid", "mask.pgrid"):
        print(f"{out / name}\tPGRID")
    return EXIT_OK


def cmd_simulate(cfg, out: Path, args) -> int:
    from .phantom import simulate_signals, write_sigset
    ph = _load_phantom(cfg, Path(cfg.phantom or cfg.out))
    sig = simulate_signals(ph, cfg.geometry, cfg.pulse_sigma or None, cfg.dt, cfg.spreading, cfg.ray_step)
    write_sigset(out / "signals.sigset", sig)
    print("file\ttransducers\tsamples\tt0_s\tdt_s")
    print(f"{out / 'signals.sigset'}\t{sig.geom.n_transducers}\t{sig.n_samples}\t{sig.t0:.9e}\t{sig.dt:.3e}")
    return EXIT_OK


def _write_image(out: Path, name: str, raster, cfg, title=None, cmap="gray", label=None):
    write_pgrid(out / f"{name}.pgrid", raster)
    if cfg.figures:
        from .plotting import save_raster
        save_raster(out / f"{name}.png", raster, title or name, cmap, label)
    print(f"{out / (name + '.pgrid')}\tPGRID")


def _train(cfg, out: Path, sig) -> int:
    from .nfield import write_sirn
    from .optimize import joint_reconstruct
    log_path = out / "train_log.jsonl"
    with log_path.open("w") as fh:
        def record(rep):
            fh.write(json.dumps(rep.record()) + "\n")
            fh.flush()
            log.info("epoch %d total=%.6e", rep.epoch, rep.total)
        res = joint_reconstruct(sig, cfg.train_config(), cfg.grid, cfg.mask, cfg.v0, record)
    print("file\tkind")
    _write_image(out, "nf_image", res.image, cfg, "NF image")
    _write_image(out, "nf_sos", res.sos, cfg, "learned SOS", "viridis", "m/s")
    write_sirn(out / "nf.sirn", res.params)
    print(f"{out / 'nf.sirn'}\tSIRN")
    print(f"{log_path}\tJSONL")
    if cfg.figures:
        from .plotting import save_loss_curve
        save_loss_curve(out / "train_loss.png", res.reports)
    return EXIT_OK


def cmd_recon(cfg, out: Path, args) -> int:
    from .beamform import BodyModel, das, das_stack, dual_sos_das
    method = getattr(args, "method", "nf")
    sig = _signals(cfg)
    if method == "nf":
        return _train(cfg, out, sig)
    grid = cfg.grid
    if method == "das":
        print("file\tkind")
        _write_image(out, "das", das(sig, grid, cfg.v0, cfg.delay), cfg, f"DAS v0={cfg.v0:g}")
    elif method == "dual-sos":
        body = BodyModel(tuple(cfg.body_center), cfg.body_radius, cfg.body_sos)
        print("file\tkind")
        _write_image(out, "dual_sos", dual_sos_das(sig, grid, cfg.v0, body), cfg, "dual-SOS DAS")
    elif method == "stack":
        stack = das_stack(sig, grid, cfg.v0, cfg.delay_list)
        print("index\tdelay_mm\tfile")
        for j, d in enumerate(stack.delays):
            path = out / f"stack_{j:03d}.pgrid"
            write_pgrid(path, stack[j])
            print(f"{j}\t{d:.6f}\t{path}")
    else:
        from .core import make_patch_layout
        from .deconv import deconvolve_image
        sos = read_pgrid(_require(cfg.sos, "--sos PGRID"))
        if sos.grid != grid:
            raise ConfigurationError("SOS grid does not match the configured image grid")
        tc = cfg.train_config()
        stack = das_stack(sig, grid, cfg.v0, tc.delays)
        layout = make_patch_layout(grid, tc.patch_size, tc.overlap)
        img = deconvolve_image(stack, RasterGrid(grid, sos.values.astype(float)), sig.geom, cfg.mask,
                               layout, tc.eps_deconv, tc.n_angles, tc.ray_step, tc.merge_fwhm, cfg.v0)
        print("file\tkind")
        _write_image(out, "deconv", img, cfg, "deconvolved")
    return EXIT_OK


def cmd_train(cfg, out: Path, args) -> int:
    return _train(cfg, out, _signals(cfg))


def cmd_psf(cfg, out: Path, args) -> int:
    from .aberration import psf_from_transfer, transfer_stack, wavefront_profile
    grid = cfg.grid
    if cfg.sos:
        sos = read_pgrid(_require(cfg.sos, "--sos PGRID"))
        sos = RasterGrid(sos.grid, sos.values.astype(float))
    else:
        sos = RasterGrid(grid, grid.full(cfg.v0).values)
    prof = wavefront_profile(cfg.point, cfg.geometry, sos, cfg.v0, cfg.mask, cfg.n_angles, cfg.ray_step)
    p = int(round(cfg.patch_size / sos.grid.pitch))
    ts = transfer_stack(prof, cfg.delay_list, p, sos.grid.pitch)
    psfs = [psf_from_transfer(H, sos.grid.pitch) for H in ts.spectra]
    with (out / "wavefront.tsv").open("w") as fh:
        fh.write("theta_rad\tw_mm\n")
        for th, w in zip(prof.angles, prof.w):
            fh.write(f"{th:.6f}\t{w:.8e}\n")
    print("index\tdelay_mm\tpeak\tfile")
    for j, (d, psf) in enumerate(zip(ts.delays, psfs)):
        path = out / f"psf_{j:03d}.pgrid"
        write_pgrid(path, psf)
        print(f"{j}\t{d:.6f}\t{psf.values.max():.6e}\t{path}")
    if cfg.figures:
        from .plotting import save_psf_panel
        save_psf_panel(out / "psf.png", psfs, ts.delays)
    return EXIT_OK


def cmd_eval(cfg, out: Path, args) -> int:
    from .evaluate import benchmark
    ph = _load_phantom(cfg, Path(cfg.phantom or cfg.out))
    sig = _signals(cfg)
    reports = benchmark(sig, ph, cfg.method_list, cfg)
    rows = [r.row() for r in reports]
    header = list(rows[0]) if rows else ["method"]
    lines = ["\t".join(header)] + ["\t".join(str(r[h]) for h in header) for r in rows]
    (out / "report.tsv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if getattr(args, "save_images", False):
        for r in reports:
            write_pgrid(out / f"eval_{r.method}.pgrid", r.image)
            if r.sos is not None:
                write_pgrid(out / f"eval_{r.method}_sos.pgrid", r.sos)
    if cfg.figures and reports:
        from .evaluate import reference_image
        from .plotting import save_eval_panel
        ref = reference_image(ph, sig, ph.pressure.grid, cfg.pulse_sigma or None, cfg.spreading, cfg.ray_step)
        save_eval_panel(out / "eval.png", ref, reports, ph.sos)
    return EXIT_OK


COMMANDS = {"phantom": cmd_phantom, "simulate": cmd_simulate, "recon": cmd_recon, "train": cmd_train,
            "psf": cmd_psf, "eval": cmd_eval}


def main(argv=None) -> int:
    from .config import resolve_config
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config_file = getattr(args, "config", None) or os.environ.get("PACTFIELD_CONFIG")
        cfg = resolve_config(flags_from_args(args), config_file)
        _set_workers(cfg.workers)
        out = _outdir(cfg)
        _echo_config(cfg, out, args.command)
        t0 = time.perf_counter()
        code = COMMANDS[args.command](cfg, out, args)
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
        return code
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigurationError, DomainError, FileFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
