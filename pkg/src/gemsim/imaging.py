"""Absorption-image analysis: optical-depth maps, cross-sections, calibration.

Images are 2D arrays indexed ``[row, column]`` with the origin at the top
left; ``x`` runs along columns and ``y`` along rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from gemsim.analysis import FitResult, fit_gaussian, fit_lorentzian
from gemsim.errors import DomainError
from gemsim.model import TransitionLine, resonance_scale_factor


@dataclass(frozen=True)
class ImagePair:
    transmitted: np.ndarray
    reference: np.ndarray
    pixel_pitch: float = 1.0
    detuning: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.shape(self.transmitted) != np.shape(self.reference):
            raise DomainError(
                f"frame shapes differ: {np.shape(self.transmitted)} vs {np.shape(self.reference)}"
            )
        if np.ndim(self.transmitted) != 2:
            raise DomainError("frames must be 2D")
        if not self.pixel_pitch > 0:
            raise DomainError(f"pixel_pitch must be > 0, got {self.pixel_pitch}")


@dataclass(frozen=True)
class ODImage:
    od: np.ndarray
    mask: np.ndarray
    detuning: float = 0.0
    pixel_pitch: float = 1.0

    @property
    def valid_fraction(self) -> float:
        return 1.0 - float(self.mask.mean())

    def masked(self) -> np.ma.MaskedArray:
        return np.ma.masked_array(self.od, self.mask)


def od_map(pair: ImagePair, intensity_floor: float = 0.0) -> ODImage:
    """Per-pixel ``ln(reference/transmitted)``.

    Pixels where either frame is non-positive or the transmitted count falls
    below ``intensity_floor`` are masked and hold NaN.
    """
    it = np.asarray(pair.transmitted, dtype=float)
    io = np.asarray(pair.reference, dtype=float)
    if it.shape != io.shape:
        raise DomainError(f"frame shapes differ: {it.shape} vs {io.shape}")
    mask = (it <= 0) | (io <= 0) | (it < intensity_floor)
    od = np.full(it.shape, np.nan)
    ok = ~mask
    od[ok] = np.log(io[ok] / it[ok])
    return ODImage(od=od, mask=mask, detuning=pair.detuning, pixel_pitch=pair.pixel_pitch)


def averaged_cross_section(
    image: ODImage, axis: str = "x", n_slices: int = 10, center: Optional[int] = None
) -> np.ndarray:
    """Mean of ``n_slices`` adjacent lines through ``center``.

    ``axis="x"`` gives a profile along x, averaging rows around row
    ``center``; ``axis="y"`` averages columns.  Masked pixels are left out
    of each mean; a position with every pixel masked comes back as NaN.
    """
    if n_slices < 1:
        raise DomainError(f"n_slices must be >= 1, got {n_slices}")
    if axis not in ("x", "y"):
        raise DomainError(f"axis must be 'x' or 'y', got {axis!r}")
    od = image.od if axis == "x" else image.od.T
    mask = image.mask if axis == "x" else image.mask.T
    n_lines = od.shape[0]
    if center is None:
        center = n_lines // 2
    lo = center - n_slices // 2
    hi = lo + n_slices
    if lo < 0 or hi > n_lines:
        raise DomainError(f"slice window [{lo}, {hi}) lies outside the image (0..{n_lines})")
    block = np.where(mask[lo:hi], 0.0, od[lo:hi])
    counts = (~mask[lo:hi]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        profile = block.sum(axis=0) / counts
    profile[counts == 0] = np.nan
    return profile


@dataclass(frozen=True)
class LineCalibration:
    center_offset: float
    fwhm: float
    fit: FitResult
    well_conditioned: bool

    def apply(self, line: TransitionLine) -> TransitionLine:
        return TransitionLine(gamma=line.gamma, center_offset=self.center_offset)

    def to_dict(self) -> dict:
        return {
            "center_offset_hz": self.center_offset,
            "fwhm_hz": self.fwhm,
            "well_conditioned": self.well_conditioned,
            "fit": self.fit.to_dict(),
        }


def calibrate_line_center(detunings, peak_ods) -> LineCalibration:
    """Locate the line centre from a low-density OD-vs-detuning scan.

    The scan is flagged poorly conditioned when the fitted centre does not
    lie strictly inside the scanned detunings with samples on both sides.
    """
    x = np.asarray(detunings, dtype=float)
    y = np.asarray(peak_ods, dtype=float)
    if len(x) < 5:
        raise DomainError(f"need at least 5 detuning points, got {len(x)}")
    order = np.argsort(x)
    x, y = x[order], y[order]
    k = int(np.argmax(y))
    interior = 0 < k < len(y) - 1
    fit = fit_lorentzian(x, y)
    if not fit.converged and interior:
        raise DomainError(f"line-centre fit did not converge: {fit.message}")
    c = fit["center"]
    well = bool(
        interior and fit.converged and (x < c).sum() >= 2 and (x > c).sum() >= 2
    )
    return LineCalibration(c, fit["fwhm"], fit, well)


PEAK_METHODS = ("profile-peak", "per-trace-max-mean")


def scaled_peak_od(
    profiles,
    detuning: float,
    line: TransitionLine,
    method: str = "profile-peak",
    positions: Optional[np.ndarray] = None,
) -> float:
    """Resonant peak OD from off-resonant cross-section(s).

    ``profiles`` is one profile or a stack of per-trace profiles.
    ``profile-peak`` averages the traces and takes the peak of a Gaussian fit
    to the mean profile; ``per-trace-max-mean`` averages the maxima of the
    individual traces.  Either peak is multiplied by the resonance scale
    factor at ``detuning - line.center_offset``.
    """
    stack = np.atleast_2d(np.asarray(profiles, dtype=float))
    if stack.size == 0 or np.all(np.isnan(stack)):
        raise DomainError("profile is empty or fully masked")
    factor = resonance_scale_factor(detuning - line.center_offset, line.gamma)
    if method == "per-trace-max-mean":
        peaks = [np.nanmax(p) for p in stack if not np.all(np.isnan(p))]
        return float(np.mean(peaks)) * factor
    if method != "profile-peak":
        raise DomainError(f"method must be one of {PEAK_METHODS}, got {method!r}")
    mean = np.nanmean(stack, axis=0)
    x = np.arange(len(mean), dtype=float) if positions is None else np.asarray(positions, float)
    ok = np.isfinite(mean)
    fit = fit_gaussian(x[ok], mean[ok])
    if not fit.converged:
        raise DomainError(f"profile fit did not converge: {fit.message}")
    return (fit["amplitude"] + fit["offset"]) * factor


@dataclass(frozen=True)
class CloudWidths:
    sigma_x: float
    sigma_y: float
    centroid: tuple
    fit_x: FitResult
    fit_y: FitResult

    @property
    def sigma_major(self) -> float:
        return max(self.sigma_x, self.sigma_y)

    @property
    def sigma_minor(self) -> float:
        return min(self.sigma_x, self.sigma_y)

    def to_dict(self) -> dict:
        return {
            "sigma_x_m": self.sigma_x,
            "sigma_y_m": self.sigma_y,
            "sigma_major_m": self.sigma_major,
            "sigma_minor_m": self.sigma_minor,
            "centroid_px": list(self.centroid),
        }


def cloud_widths(image: ODImage, pixel_pitch: Optional[float] = None) -> CloudWidths:
    """Gaussian widths of the cloud along the image axes through its centroid.

    The centroid is the OD-weighted mean position of the unmasked pixels.
    Clouds are assumed aligned with the image axes.
    """
    pitch = image.pixel_pitch if pixel_pitch is None else pixel_pitch
    if image.valid_fraction <= 0.5:
        raise DomainError(
            f"only {image.valid_fraction:.0%} of pixels are valid; need more than 50%"
        )
    w = np.where(image.mask, 0.0, np.clip(image.od, 0.0, None))
    total = w.sum()
    if not total > 0:
        raise DomainError("image holds no positive optical depth")
    rows, cols = np.indices(w.shape)
    cy = float((rows * w).sum() / total)
    cx = float((cols * w).sum() / total)
    fits = {}
    for axis, center in (("x", cy), ("y", cx)):
        prof = averaged_cross_section(image, axis=axis, n_slices=1, center=int(round(center)))
        pos = np.arange(len(prof), dtype=float)
        ok = np.isfinite(prof)
        fit = fit_gaussian(pos[ok], prof[ok])
        if not fit.converged:
            raise DomainError(f"Gaussian fit along {axis} did not converge: {fit.message}")
        fits[axis] = fit
    return CloudWidths(
        sigma_x=fits["x"]["sigma"] * pitch,
        sigma_y=fits["y"]["sigma"] * pitch,
        centroid=(cx, cy),
        fit_x=fits["x"],
        fit_y=fits["y"],
    )


# ---------------------------------------------------------------- file formats


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM with 8- or 16-bit samples."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    count = width * height
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(height, width).astype(float)


def write_pgm(path, image) -> None:
    """Write a 16-bit binary PGM; values are rounded and clipped to 0..65535."""
    arr = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 65535).astype(">u2")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def read_sidecar(path) -> dict:
    """Load ``<frame>.json`` metadata (detuning_hz, pixel_pitch_m, timestamp)."""
    meta = json.loads(Path(path).read_text())
    unknown = set(meta) - {"detuning_hz", "pixel_pitch_m", "timestamp", "time_of_flight_s"}
    if unknown:
        raise ValueError(f"{path}: unknown metadata keys {sorted(unknown)}")
    return meta


def sidecar_for(frame_path) -> Path:
    return Path(frame_path).with_suffix(".json")


def load_pair(transmitted_path, reference_path, metadata_path=None) -> ImagePair:
    it = read_frame(transmitted_path)
    io = read_frame(reference_path)
    meta_path = Path(metadata_path) if metadata_path else sidecar_for(transmitted_path)
    meta = read_sidecar(meta_path) if meta_path.exists() else {}
    return ImagePair(
        transmitted=it,
        reference=io,
        pixel_pitch=float(meta.get("pixel_pitch_m", 1.0)),
        detuning=float(meta.get("detuning_hz", 0.0)),
        metadata=meta,
    )


def synthetic_cloud(
    shape: Sequence[int],
    peak_od: float,
    sigma_x_px: float,
    sigma_y_px: float,
    center: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Gaussian optical-depth map, centred on the image unless ``center=(cx, cy)``."""
    rows, cols = np.indices(shape, dtype=float)
    cx, cy = ((shape[1] - 1) / 2, (shape[0] - 1) / 2) if center is None else center
    return peak_od * np.exp(
        -((cols - cx) ** 2) / (2 * sigma_x_px ** 2) - (rows - cy) ** 2 / (2 * sigma_y_px ** 2)
    )


def synthetic_pair(
    od: np.ndarray,
    reference_level: float = 20000.0,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    pixel_pitch: float = 1.0,
    detuning: float = 0.0,
) -> ImagePair:
    """Frames that reproduce ``od`` under Beer's law, with optional Gaussian count noise."""
    io = np.full(od.shape, float(reference_level))
    it = io * np.exp(-od)
    if noise:
        rng = rng or np.random.default_rng(0)
        io = io + rng.normal(0.0, noise, od.shape)
        it = it + rng.normal(0.0, noise, od.shape)
    return ImagePair(it, io, pixel_pitch=pixel_pitch, detuning=detuning)


def od_from_detuning(od_resonant: float, detuning: float, line: TransitionLine) -> float:
    """Off-resonant optical depth seen at ``detuning`` for a given resonant OD."""
    return od_resonant / resonance_scale_factor(detuning - line.center_offset, line.gamma)


def profile_stats(profile: np.ndarray) -> dict:
    ok = np.isfinite(profile)
    return {
        "n": int(len(profile)),
        "missing": int((~ok).sum()),
        "max": float(np.nanmax(profile)) if ok.any() else math.nan,
    }
