"""Command-line surface: synth, degrade, pretrain, sharpen, eval-rr, eval-fr, trace-plot.

Every tuning flag has a config-file equivalent (flat `key = value` text,
keys named after the config dataclass fields); flags override file values
and the effective configuration is echoed into a manifest written alongside
every produced output.  Reports go to standard output in a fixed key-value
schema; files are written only where an output path is given.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    DataCube,
    PanImage,
    denormalize,
    normalize_pair,
    read_config,
    read_cube,
    read_pan,
    validate_pair,
    write_cube,
    write_pan,
)
from .imaging import MtfFilterSpec
from .loss import LossConfig
from .metrics import MetricsReport, d_lambda, d_s, ergas, psnr, q_avg, sam
from .network import init_params, load_params, save_params
from .rolling import PretrainConfig, TuningConfig, pretrain, read_traces, sharpen_cube, write_traces
from .synth import SceneSpec, generate_scene, wald_degrade

# flag destination -> config-file key
_FLAG_KEYS = {
    "alpha": "alpha",
    "lr": "lr",
    "beta_overlap": "beta_overlap",
    "beta_nonoverlap": "beta_nonoverlap",
    "sigma": "sigma",
    "rho_max": "rho_max_mode",
    "pan_band": "pan_band",
    "mtf_gain": "nyquist_gain",
    "seed": "seed",
    "direction": "direction",
}

_DEFAULTS = {
    "alpha": "1.5",
    "first_band_iters": "20",
    "max_iters": "80",
    "lr": "1e-5",
    "direction": "forward",
    "beta_overlap": "0.5",
    "beta_nonoverlap": "0.25",
    "sigma": "6",
    "rho_max_mode": "estimated",
    "pan_band": "400,700",
    "ratio": "6",
    "nyquist_gain": "0.3",
    "half_width": "20",
    "seed": "0",
}


def _add_tuning_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key=value configuration file")
    p.add_argument("--alpha", type=float, help="tuning iterations per nm of wavelength gap")
    p.add_argument("--lr", type=float, help="optimizer learning rate")
    p.add_argument("--beta-overlap", dest="beta_overlap", type=float, help="spatial-loss weight inside the PAN bandwidth")
    p.add_argument("--beta-nonoverlap", dest="beta_nonoverlap", type=float, help="spatial-loss weight outside the PAN bandwidth")
    p.add_argument("--sigma", type=int, help="local correlation window size")
    p.add_argument("--rho-max", dest="rho_max", choices=("const", "estimated"), help="correlation bound mode")
    p.add_argument("--pan-band", dest="pan_band", metavar="LO,HI", help="panchromatic bandwidth in nm")
    p.add_argument("--mtf-gain", dest="mtf_gain", type=float, help="Gaussian filter gain at the decimated Nyquist")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--direction", choices=("forward", "backward"), help="band chain direction")


def _resolve_config(args) -> dict[str, str]:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            if key not in cfg:
                raise ValueError(f"unknown configuration key {key!r}")
            cfg[key] = value
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            if dest == "rho_max":
                value = {"const": "constant", "estimated": "estimated"}[value]
            cfg[key] = str(value)
    return cfg


def _tuning_from_config(cfg: dict[str, str]) -> TuningConfig:
    lo, hi = (float(v) for v in cfg["pan_band"].split(","))
    mode = cfg["rho_max_mode"]
    mode = {"const": "constant"}.get(mode, mode)
    return TuningConfig(
        alpha=float(cfg["alpha"]),
        first_band_iters=int(cfg["first_band_iters"]),
        max_iters=int(cfg["max_iters"]),
        lr=float(cfg["lr"]),
        loss=LossConfig(
            beta_overlap=float(cfg["beta_overlap"]),
            beta_nonoverlap=float(cfg["beta_nonoverlap"]),
            sigma=int(cfg["sigma"]),
            rho_max_mode=mode,
            pan_band=(lo, hi),
        ),
        filt=MtfFilterSpec(
            ratio=int(cfg["ratio"]),
            nyquist_gain=float(cfg["nyquist_gain"]),
            half_width=int(cfg["half_width"]),
        ),
        direction=cfg["direction"],
    )


def _write_manifest(path: Path, subcommand: str, cfg: dict[str, str], inputs, outputs, seconds: float) -> None:
    lines = [
        f"subcommand = {subcommand}",
        f"version = {__version__}",
        f"timing_s = {seconds:.3f}",
    ]
    lines += [f"input.{i} = {p}" for i, p in enumerate(inputs)]
    lines += [f"output.{i} = {p}" for i, p in enumerate(outputs)]
    lines += [f"cfg.{k} = {v}" for k, v in sorted(cfg.items())]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    lo, hi = (float(v) for v in cfg["pan_band"].split(","))
    spec = SceneSpec(
        size=args.size,
        bands=args.bands,
        endmembers=args.endmembers,
        smoothness=args.smoothness,
        noise=args.noise,
        pan_detail=args.pan_detail,
        seed=int(cfg["seed"]),
        ratio=int(cfg["ratio"]),
        pan_band=(lo, hi),
    )
    cube, pan = generate_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cube_path, pan_path = out / "gt.rpnc", out / "pan.rpnc"
    write_cube(cube, cube_path)
    write_pan(pan, pan_path)
    scene_cfg = dict(cfg)
    for key in ("size", "bands", "endmembers", "smoothness", "noise", "pan_detail"):
        scene_cfg[key] = str(getattr(args, key))
    _write_manifest(out / "manifest.txt", "synth", scene_cfg, [], [cube_path, pan_path], time.time() - t0)
    print(f"wrote {cube_path} ({cube.bands} bands {cube.height}x{cube.width}) and {pan_path}")
    return 0


def _cmd_degrade(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    tuning = _tuning_from_config(cfg)
    cube = read_cube(args.cube)
    pan = read_pan(args.pan)
    validate_pair_hr(cube, pan)
    hs_lr, pan_used, _gt = wald_degrade(cube, pan, tuning.filt, tuning.dec())
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hs_path, pan_path = out / "hs_lr.rpnc", out / "pan_rr.rpnc"
    write_cube(hs_lr, hs_path)
    write_pan(pan_used, pan_path)
    _write_manifest(out / "manifest.txt", "degrade", cfg, [args.cube, args.pan], [hs_path, pan_path], time.time() - t0)
    print(f"wrote {hs_path} ({hs_lr.bands} bands {hs_lr.height}x{hs_lr.width}) and {pan_path}")
    return 0


def validate_pair_hr(cube: DataCube, pan: PanImage) -> None:
    if pan.values.shape != (cube.height, cube.width):
        raise ValueError(
            f"full-resolution cube {cube.height}x{cube.width} and pan {pan.height}x{pan.width} must match"
        )


def _cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    tuning = _tuning_from_config(cfg)
    cube = read_cube(args.cube)
    pan = read_pan(args.pan)
    validate_pair(cube, pan, tuning.filt.ratio)
    cube_n, pan_n, _s = normalize_pair(cube, pan)
    pre = PretrainConfig(
        patch_size=args.patch_size,
        n_patches=args.patches,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=float(cfg["lr"]),
        n_val=args.val,
        seed=int(cfg["seed"]),
    )
    band = args.band_index
    if not 0 <= band < cube_n.bands:
        raise ValueError(f"band index {band} out of range [0, {cube_n.bands})")
    params, history = pretrain(
        cube_n.values[band], pan_n.values, float(cube_n.wavelengths[band]), tuning, pre
    )
    save_params(params, args.out)
    for epoch, train_loss, val_loss in history:
        print(f"epoch = {epoch}  train_loss = {train_loss:.10g}  val_loss = {val_loss:.10g}")
    pre_cfg = dict(cfg)
    for key in ("patch_size", "patches", "epochs", "batch_size", "val", "band_index"):
        pre_cfg[key] = str(getattr(args, key))
    _write_manifest(Path(str(args.out) + ".manifest"), "pretrain", pre_cfg, [args.cube, args.pan], [args.out], time.time() - t0)
    return 0


def _cmd_sharpen(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    tuning = _tuning_from_config(cfg)
    cube = read_cube(args.cube)
    pan = read_pan(args.pan)
    validate_pair(cube, pan, tuning.filt.ratio)
    params0 = load_params(args.checkpoint) if args.checkpoint else init_params(int(cfg["seed"]))
    cube_n, pan_n, s = normalize_pair(cube, pan)

    def progress(position, total, band, n_iters, trace):
        print(
            f"band {band} ({position}/{total}): {n_iters} iterations, "
            f"final l_total = {trace.final.l_total:.6g}",
            file=sys.stderr,
        )

    fused_n, traces = sharpen_cube(cube_n, pan_n, params0, tuning, progress=progress)
    fused = DataCube(
        fused_n.wavelengths.copy(),
        denormalize(fused_n.values, s),
        scale=1.0,
        ratio=cube.ratio,
    )
    write_cube(fused, args.out)
    outputs = [args.out]
    trace_path = args.trace or (str(args.out) + ".trace")
    write_traces(traces, trace_path)
    outputs.append(trace_path)
    aborted = [tr.band_index for tr in traces if tr.aborted]
    if aborted:
        print(f"aborted_bands = {','.join(map(str, aborted))}")
    _write_manifest(Path(str(args.out) + ".manifest"), "sharpen", cfg, [args.cube, args.pan, args.checkpoint or "-"], outputs, time.time() - t0)
    print(f"wrote {args.out}")
    return 0


def _load_for_eval(path) -> DataCube:
    cube = read_cube(path)
    return cube


def _cmd_eval_rr(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    fused = _load_for_eval(args.fused)
    gt = _load_for_eval(args.gt)
    ratio = int(cfg["ratio"])
    report = MetricsReport.reduced(
        sam_deg=sam(fused.values, gt.values),
        ergas=ergas(fused.values, gt.values, ratio=ratio),
        psnr_db=psnr(fused.values, gt.values),
        q_avg=q_avg(fused.values, gt.values, block=args.block),
    )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _write_manifest(Path(str(args.out) + ".manifest"), "eval-rr", cfg, [args.fused, args.gt], [args.out], time.time() - t0)
    return 0


def _cmd_eval_fr(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.time()
    tuning = _tuning_from_config(cfg)
    fused = _load_for_eval(args.fused)
    hs = _load_for_eval(args.hs)
    pan = read_pan(args.pan)
    report = MetricsReport.full(
        d_lambda=d_lambda(fused.values, hs.values, tuning.filt, tuning.dec(), block=args.block),
        d_s=d_s(fused.values, pan.values, hs.values, tuning.filt, tuning.dec()),
    )
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _write_manifest(Path(str(args.out) + ".manifest"), "eval-fr", cfg, [args.fused, args.pan, args.hs], [args.out], time.time() - t0)
    return 0


def _cmd_trace_plot(args) -> int:
    rows = read_traces(args.trace)
    lines = ["global_iter,band,iter,l_spectral,l_spatial,l_total"]
    for i, (band, it, lspec, lspat, ltot) in enumerate(rows):
        lines.append(f"{i},{band},{it},{lspec:.10g},{lspat:.10g},{ltot:.10g}")
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rpnn", description="Band-wise hyperspectral pansharpening pipeline")
    p.add_argument("--version", action="version", version=f"rpnn {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic ground-truth scene")
    ps.add_argument("--out-dir", required=True)
    ps.add_argument("--size", type=int, default=384)
    ps.add_argument("--bands", type=int, default=16)
    ps.add_argument("--endmembers", type=int, default=5)
    ps.add_argument("--smoothness", type=float, default=3.0)
    ps.add_argument("--noise", type=float, default=0.0)
    ps.add_argument("--pan-detail", dest="pan_detail", type=float, default=0.0)
    _add_tuning_flags(ps)
    ps.set_defaults(func=_cmd_synth)

    pd = sub.add_parser("degrade", help="Wald-protocol degradation of a scene")
    pd.add_argument("--cube", required=True)
    pd.add_argument("--pan", required=True)
    pd.add_argument("--out-dir", required=True)
    _add_tuning_flags(pd)
    pd.set_defaults(func=_cmd_degrade)

    pp = sub.add_parser("pretrain", help="pretrain initial weights on one band")
    pp.add_argument("--cube", required=True)
    pp.add_argument("--pan", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--band-index", dest="band_index", type=int, default=0)
    pp.add_argument("--patch-size", dest="patch_size", type=int, default=240)
    pp.add_argument("--patches", type=int, default=100)
    pp.add_argument("--epochs", type=int, default=200)
    pp.add_argument("--batch-size", dest="batch_size", type=int, default=4)
    pp.add_argument("--val", type=int, default=10)
    _add_tuning_flags(pp)
    pp.set_defaults(func=_cmd_pretrain)

    px = sub.add_parser("sharpen", help="sharpen a cube with rolling band-wise tuning")
    px.add_argument("--cube", required=True)
    px.add_argument("--pan", required=True)
    px.add_argument("--checkpoint", help="initial weights (default: fresh seeded initialization)")
    px.add_argument("--out", required=True)
    px.add_argument("--trace", help="trace file path (default: <out>.trace)")
    _add_tuning_flags(px)
    px.set_defaults(func=_cmd_sharpen)

    pr = sub.add_parser("eval-rr", help="reduced-resolution metrics against ground truth")
    pr.add_argument("--fused", required=True)
    pr.add_argument("--gt", required=True)
    pr.add_argument("--block", type=int, default=32)
    pr.add_argument("--out")
    _add_tuning_flags(pr)
    pr.set_defaults(func=_cmd_eval_rr)

    pf = sub.add_parser("eval-fr", help="full-resolution no-reference metrics")
    pf.add_argument("--fused", required=True)
    pf.add_argument("--pan", required=True)
    pf.add_argument("--hs", required=True)
    pf.add_argument("--block", type=int, default=32)
    pf.add_argument("--out")
    _add_tuning_flags(pf)
    pf.set_defaults(func=_cmd_eval_fr)

    pt = sub.add_parser("trace-plot", help="convert a trace file to plot-ready CSV")
    pt.add_argument("--trace", required=True)
    pt.add_argument("--out")
    pt.set_defaults(func=_cmd_trace_plot)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
