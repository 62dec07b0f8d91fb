"""Control plane: iteration scheduling, single-band tuning, the band-to-band
parameter propagation chain, and pretraining.

Each band is tuned by running a fixed number of optimizer iterations of the
combined loss on the whole image (one batch, no sampling), starting from the
parameters tuned on the previous band.  The iteration budget grows with the
wavelength gap to the previous band, capped at ``max_iters``:

    N_1 = first_band_iters,  N_b = min(round(alpha * dlambda_b), max_iters)

with a floor of one iteration (ties round to even).  Optimizer moment
accumulators are reset per band; only the weights are inherited.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import DataCube, PanImage, validate_pair
from .imaging import DecimationSpec, MtfFilterSpec, interpolate_band
from .loss import LossConfig, LossReport, combined_loss, rho_max_map
from .network import NetParams, NetWorkspace, backward, forward_with_cache, init_params
from .nn import AdamState, adam_update

log = logging.getLogger(__name__)

DIRECTIONS = ("forward", "backward")


@dataclass(frozen=True)
class TuningConfig:
    """Per-run tuning knobs; defaults follow the method's operating point."""

    alpha: float = 1.5
    first_band_iters: int = 20
    max_iters: int = 80
    lr: float = 1e-5
    loss: LossConfig = field(default_factory=LossConfig)
    filt: MtfFilterSpec = field(default_factory=MtfFilterSpec)
    direction: str = "forward"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.first_band_iters < 1:
            raise ValueError(f"first_band_iters must be >= 1, got {self.first_band_iters}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")

    def dec(self) -> DecimationSpec:
        return DecimationSpec.for_ratio(self.filt.ratio)


@dataclass
class BandTrace:
    """Per-band tuning record: one LossReport per iteration plus the final state."""

    band_index: int
    wavelength: float
    n_iters: int
    reports: list[LossReport]
    final: LossReport
    aborted: bool = False


def schedule_iterations(position: int, wavelength: float, prev_wavelength: float | None, cfg: TuningConfig) -> int:
    """Iteration budget for the band at 1-based chain position."""
    if position < 1:
        raise ValueError(f"position must be >= 1, got {position}")
    if position == 1:
        return cfg.first_band_iters
    if prev_wavelength is None:
        raise ValueError("previous wavelength required for position > 1")
    gap = wavelength - prev_wavelength
    if gap <= 0:
        raise ValueError(f"non-positive wavelength gap {gap} (duplicate wavelength?)")
    n = int(np.rint(cfg.alpha * gap))
    return max(min(n, cfg.max_iters), 1)


def tune_band(
    band_lr: np.ndarray,
    pan: np.ndarray,
    wavelength: float,
    params_in: NetParams,
    n_iters: int,
    cfg: TuningConfig,
    work: NetWorkspace | None = None,
    band_key=None,
):
    """Run n_iters optimizer steps of the combined loss on one band.

    The whole image is the (single) training batch.  Returns the tuned
    parameters, the prediction made with them, and the iteration trace.
    A non-finite loss aborts the band: the last finite state is returned
    and the trace is flagged.
    """
    if n_iters < 1:
        raise ValueError(f"n_iters must be >= 1, got {n_iters}")
    band_lr = np.asarray(band_lr, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    filt, dec = cfg.filt, cfg.dec()
    interp = interpolate_band(band_lr, filt.ratio)
    if interp.shape != pan.shape:
        raise ValueError(f"interpolated band {interp.shape} does not match pan {pan.shape}")
    x0 = np.stack([pan, interp])
    rho_max = rho_max_map(pan, band_lr, cfg.loss, filt)
    if work is None:
        work = NetWorkspace()
    if band_key is None:
        band_key = object()

    params = params_in.copy()
    last_good = params
    plist = params.to_list()
    adam = AdamState.for_params(plist, cfg.lr)
    reports: list[LossReport] = []
    aborted = False
    for it in range(n_iters):
        fused, cache = forward_with_cache(pan, interp, params, work=work, x0=x0, input_key=band_key)
        report, grad_fused = combined_loss(
            fused, band_lr, pan, wavelength, cfg.loss, filt, dec, rho_max=rho_max, iteration=it
        )
        if not np.isfinite(report.l_total):
            log.warning("band %s: non-finite loss at iteration %d, aborting band", band_key, it)
            aborted = True
            params = last_good
            break
        last_good = params
        reports.append(report)
        grads = backward(grad_fused, cache, params, work=work)
        plist = adam_update(plist, grads, adam)
        params = NetParams.from_list(plist)

    fused, _ = forward_with_cache(pan, interp, params, work=work, x0=x0, input_key=band_key)
    final, _grad = combined_loss(
        fused, band_lr, pan, wavelength, cfg.loss, filt, dec, rho_max=rho_max, iteration=len(reports)
    )
    if not aborted and not np.isfinite(final.l_total):
        log.warning("band %s: non-finite loss after the last update, reverting one step", band_key)
        aborted = True
        params = last_good
        fused, _ = forward_with_cache(pan, interp, params, work=work, x0=x0, input_key=band_key)
        final, _grad = combined_loss(
            fused, band_lr, pan, wavelength, cfg.loss, filt, dec, rho_max=rho_max, iteration=len(reports)
        )
    trace = BandTrace(
        band_index=-1,
        wavelength=wavelength,
        n_iters=len(reports),
        reports=reports,
        final=final,
        aborted=aborted,
    )
    return params, fused, trace


def sharpen_cube(
    cube: DataCube,
    pan: PanImage,
    params0: NetParams,
    cfg: TuningConfig,
    propagate: bool = True,
    progress=None,
):
    """Sharpen every band sequentially, propagating tuned weights along the chain.

    Bands are processed in ascending wavelength order ("forward"); the
    backward direction (descending) exists for the propagation-equivalence
    diagnostic.  ``propagate=False`` restarts every band from params0 (the
    no-propagation baseline).  Returns (fused cube, traces in band order).
    """
    ratio = cfg.filt.ratio
    validate_pair(cube, pan, ratio)
    order = range(cube.bands) if cfg.direction == "forward" else range(cube.bands - 1, -1, -1)
    fused_values = np.empty((cube.bands, pan.height, pan.width))
    traces: list[BandTrace | None] = [None] * cube.bands
    params = params0
    prev_wavelength = None
    work = NetWorkspace()
    for position, b in enumerate(order, start=1):
        lam = float(cube.wavelengths[b])
        gap_ref = prev_wavelength if position > 1 else None
        if cfg.direction == "backward" and gap_ref is not None:
            n = schedule_iterations(position, gap_ref, lam, cfg)  # gap measured toward longer wavelength
        else:
            n = schedule_iterations(position, lam, gap_ref, cfg)
        start = params if propagate else params0
        tuned, fused_b, trace = tune_band(
            cube.values[b], pan.values, lam, start, n, cfg, work=work, band_key=("band", b)
        )
        trace.band_index = b
        fused_values[b] = fused_b
        traces[b] = trace
        if trace.aborted:
            log.warning("band %d aborted; chain continues from last good parameters", b)
        params = tuned
        prev_wavelength = lam
        if progress is not None:
            progress(position, cube.bands, b, n, trace)
    fused = DataCube(cube.wavelengths.copy(), fused_values, scale=cube.scale, ratio=cube.ratio)
    return fused, traces


@dataclass(frozen=True)
class PretrainConfig:
    """Patch-based pretraining recipe (defaults follow the production setup)."""

    patch_size: int = 240
    n_patches: int = 100
    epochs: int = 200
    batch_size: int = 4
    lr: float = 1e-5
    n_val: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.n_patches < 2 or self.batch_size < 1:
            raise ValueError("invalid pretraining configuration")
        if not 0 < self.n_val < self.n_patches:
            raise ValueError(f"n_val must be in (0, {self.n_patches}), got {self.n_val}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


def _patch_grid(hp: int, wp: int, patch: int, ratio: int, want: int) -> tuple[int, list[tuple[int, int]]]:
    """Non-overlapping patch origins; shrinks the patch when the grid is short.

    Patches stay multiples of the ratio and at least 4*ratio wide (the
    interpolation kernel needs 4 low-resolution samples of support).
    """
    min_patch = 4 * ratio
    patch = max((patch // ratio) * ratio, min_patch)
    if (hp // patch) * (wp // patch) < want:
        shrunk = max((int(np.sqrt(hp * wp / want)) // ratio) * ratio, min_patch)
        while shrunk > min_patch and (hp // shrunk) * (wp // shrunk) < want:
            shrunk -= ratio
        log.warning(
            "pretraining image %dx%d too small for %d patches of %d; using %d",
            hp, wp, want, patch, shrunk,
        )
        patch = shrunk
    if (hp // patch) * (wp // patch) < want:
        raise ValueError(f"image {hp}x{wp} cannot yield {want} patches even at patch size {patch}")
    origins = [
        (y, x)
        for y in range(0, hp - patch + 1, patch)
        for x in range(0, wp - patch + 1, patch)
    ]
    return patch, origins


def pretrain(
    band_lr: np.ndarray,
    pan: np.ndarray,
    wavelength: float,
    cfg: TuningConfig,
    pre: PretrainConfig | None = None,
    params_in: NetParams | None = None,
):
    """Patch-based pretraining of the initial weights on one band/PAN pair.

    The pair is tiled into n_patches patches of PAN size patch_size, split
    into train and validation sets, and optimized with the same combined
    loss.  Returns (parameters with the best validation loss, history) where
    history rows are (epoch, mean train loss, validation loss); epoch 0 is
    the untrained validation baseline.
    """
    pre = pre or PretrainConfig()
    band_lr = np.asarray(band_lr, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    filt, dec = cfg.filt, cfg.dec()
    ratio = filt.ratio
    if pan.shape != (band_lr.shape[0] * ratio, band_lr.shape[1] * ratio):
        raise ValueError(f"pan {pan.shape} is not {ratio}x the training band {band_lr.shape}")
    rng = np.random.default_rng(pre.seed)
    patch, origins = _patch_grid(pan.shape[0], pan.shape[1], pre.patch_size, ratio, pre.n_patches)
    chosen = [origins[i] for i in rng.permutation(len(origins))[: pre.n_patches]]
    n_train = pre.n_patches - pre.n_val
    train_set, val_set = chosen[:n_train], chosen[n_train:]

    def make_patch(origin):
        y, x = origin
        p_pan = np.ascontiguousarray(pan[y:y + patch, x:x + patch])
        p_lr = np.ascontiguousarray(
            band_lr[y // ratio:(y + patch) // ratio, x // ratio:(x + patch) // ratio]
        )
        interp = interpolate_band(p_lr, ratio)
        x0 = np.stack([p_pan, interp])
        rho = rho_max_map(p_pan, p_lr, cfg.loss, filt)
        return p_lr, p_pan, interp, x0, rho

    train = [make_patch(o) for o in train_set]
    val = [make_patch(o) for o in val_set]

    params = params_in.copy() if params_in is not None else init_params(pre.seed)
    work = NetWorkspace()

    def eval_loss(p: NetParams, items) -> float:
        total = 0.0
        for p_lr, p_pan, interp, x0, rho in items:
            fused, _ = forward_with_cache(p_pan, interp, p, work=work, x0=x0)
            rep, _g = combined_loss(fused, p_lr, p_pan, wavelength, cfg.loss, filt, dec, rho_max=rho)
            total += rep.l_total
        return total / len(items)

    best_val = eval_loss(params, val)
    best_params = params.copy()
    best_epoch = 0
    history = [(0, float("nan"), best_val)]
    if pre.epochs == 0:
        return params, history

    plist = params.to_list()
    adam = AdamState.for_params(plist, pre.lr)
    for epoch in range(1, pre.epochs + 1):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, pre.batch_size):
            batch = order[start:start + pre.batch_size]
            grads_sum = None
            for idx in batch:
                p_lr, p_pan, interp, x0, rho = train[idx]
                fused, cache = forward_with_cache(p_pan, interp, params, work=work, x0=x0)
                rep, gf = combined_loss(fused, p_lr, p_pan, wavelength, cfg.loss, filt, dec, rho_max=rho)
                epoch_loss += rep.l_total
                grads = backward(gf, cache, params, work=work)
                if grads_sum is None:
                    grads_sum = grads
                else:
                    for acc, g in zip(grads_sum, grads):
                        acc += g
            grads_avg = [g / len(batch) for g in grads_sum]
            plist = adam_update(plist, grads_avg, adam)
            params = NetParams.from_list(plist)
        val_loss = eval_loss(params, val)
        history.append((epoch, epoch_loss / n_train, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
    log.info("pretraining: best validation loss %.6g at epoch %d", best_val, best_epoch)
    return best_params, history


# ---------------------------------------------------------------------------
# trace files: one line per tuning iteration


TRACE_HEADER = "# band iter l_spectral l_spatial l_total"


def write_traces(traces: list[BandTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRACE_HEADER + "\n")
        for tr in traces:
            for rep in tr.reports:
                fh.write(
                    f"{tr.band_index} {rep.iteration} "
                    f"{rep.l_spectral:.10g} {rep.l_spatial:.10g} {rep.l_total:.10g}\n"
                )


def read_traces(path) -> list[tuple[int, int, float, float, float]]:
    """Parse a trace file into (band, iter, l_spectral, l_spatial, l_total) rows."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"malformed trace line: {line!r}")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]), float(parts[4])))
    return rows
