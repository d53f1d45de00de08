"""Nonlinear least-squares fitting of excitation spectra and scan images.

Two models, both solved by a Levenberg-Marquardt loop with analytic
Jacobians (damping starts at 1e-3 and moves by factors of 10):

* a sum of Lorentzian peaks over a constant baseline, for multi-line
  excitation spectra, and
* an axis-aligned 2D Gaussian spot over a constant offset, for resonant
  scan images, whose fitted center standard errors give the localization
  precision.

Parameter standard errors come from the inverse Gauss-Newton Hessian
scaled by the residual variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .errors import ConvergenceError, DegenerateInputError, DomainError, ParseError

LM_MAX_ITER = 200
LM_COST_RTOL = 1e-10
LM_DAMPING_INIT = 1e-3


# ---------------------------------------------------------------------------
# Levenberg-Marquardt core
# ---------------------------------------------------------------------------

def _lm_minimize(residual_jacobian, p0, max_iter=LM_MAX_ITER, cost_rtol=LM_COST_RTOL):
    """Minimize sum(r(p)^2) given a callable returning (r, J).

    Returns (params, jacobian_at_solution, cost, n_iter). Raises
    ConvergenceError carrying the best parameters if the damping schedule
    stalls or the iteration budget runs out before the relative cost
    change drops below ``cost_rtol``.
    """
    p = np.asarray(p0, dtype=float).copy()
    r, jac = residual_jacobian(p)
    cost = float(r @ r)
    cost_floor = 1e-20 * max(cost, 1.0)
    lam = LM_DAMPING_INIT

    for iteration in range(1, max_iter + 1):
        jtj = jac.T @ jac
        grad = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag <= 0] = 1e-30

        accepted = False
        best_attempt = math.inf
        for _ in range(60):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                if np.all(np.abs(step) <= 1e-14 * (np.abs(p) + 1e-300)):
                    return p, jac, cost, iteration  # step negligible: stationary
                p_new = p + step
                r_new, jac_new = residual_jacobian(p_new)
                cost_new = float(r_new @ r_new)
                if math.isfinite(cost_new):
                    best_attempt = min(best_attempt, cost_new)
                    if cost_new < cost:
                        accepted = True
                        break
            lam *= 10.0
            if lam > 1e15:
                break

        if not accepted:
            # Residuals at numerical zero, or no damping level moves the
            # cost in either direction: stationary for all practical use.
            if cost <= cost_floor or best_attempt <= cost * (1.0 + 1e-10):
                return p, jac, cost, iteration
            raise ConvergenceError(
                "Levenberg-Marquardt stalled before meeting the cost tolerance",
                best=p,
                cost=cost,
            )

        rel_drop = (cost - cost_new) / max(cost, 1e-300)
        p, r, jac, cost = p_new, r_new, jac_new, cost_new
        lam = max(lam / 10.0, 1e-300)
        # A tiny improvement only counts as convergence once the damping has
        # relaxed; a cautious high-damping step says nothing about optimality.
        if rel_drop < cost_rtol and lam <= 1e-2:
            return p, jac, cost, iteration

    raise ConvergenceError(
        f"no convergence within {max_iter} iterations", best=p, cost=cost
    )


def _covariance(jac, cost, n_points):
    """Parameter covariance: inv(J'J) * residual variance."""
    n_par = jac.shape[1]
    dof = max(n_points - n_par, 1)
    s2 = cost / dof
    jtj = jac.T @ jac
    try:
        inv = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        inv = np.linalg.pinv(jtj)
    return inv * s2


# ---------------------------------------------------------------------------
# Spectra: sum of Lorentzians
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """A sampled excitation spectrum: frequencies (GHz) and photon counts."""

    frequency_ghz: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        freq = np.asarray(self.frequency_ghz, dtype=float)
        cts = np.asarray(self.counts, dtype=float)
        if freq.ndim != 1 or freq.shape != cts.shape:
            raise DomainError("frequency and counts must be equal-length 1-d arrays")
        if freq.size < 8:
            raise DomainError("spectrum needs at least 8 samples")
        if np.any(np.diff(freq) <= 0):
            raise DomainError("frequencies must be strictly ascending")
        if cts.min() < 0:
            raise DomainError("counts must be non-negative")
        freq.setflags(write=False)
        cts.setflags(write=False)
        object.__setattr__(self, "frequency_ghz", freq)
        object.__setattr__(self, "counts", cts)


@dataclass(frozen=True)
class LorentzianPeak:
    center_ghz: float
    fwhm_ghz: float
    amplitude: float

    def __post_init__(self):
        if self.fwhm_ghz <= 0:
            raise DomainError("fwhm must be positive")
        if self.amplitude <= 0:
            raise DomainError("amplitude must be positive")


@dataclass(frozen=True)
class LorentzianFit:
    """Result of a multi-Lorentzian fit.

    ``peaks`` are sorted by center; ``covariance`` is ordered to match:
    baseline first, then (center, fwhm, amplitude) per sorted peak.
    ``warnings`` flags suspect peaks (near-zero or negative amplitude).
    """

    peaks: tuple[LorentzianPeak, ...]
    baseline: float
    residual_rms: float
    covariance: np.ndarray
    n_iterations: int
    warnings: tuple[str, ...] = ()


def lorentzian_sum(freq, params):
    """baseline + sum of A * (w/2)^2 / ((f - c)^2 + (w/2)^2) peaks.

    ``params`` is [baseline, c1, w1, A1, c2, w2, A2, ...].
    """
    freq = np.asarray(freq, dtype=float)
    out = np.full_like(freq, params[0])
    for c, w, a in np.asarray(params[1:]).reshape(-1, 3):
        hw2 = (0.5 * w) ** 2
        out += a * hw2 / ((freq - c) ** 2 + hw2)
    return out


def _lorentzian_residual_jacobian(freq, counts, weights):
    def fn(params):
        n_peaks = (len(params) - 1) // 3
        model = np.full_like(freq, params[0])
        jac = np.empty((freq.size, len(params)))
        jac[:, 0] = 1.0
        for k in range(n_peaks):
            c, w, a = params[1 + 3 * k : 4 + 3 * k]
            df = freq - c
            hw2 = (0.5 * w) ** 2
            denom = df * df + hw2
            shape = hw2 / denom
            model += a * shape
            jac[:, 1 + 3 * k] = a * hw2 * 2.0 * df / (denom * denom)
            jac[:, 2 + 3 * k] = a * (0.5 * w) * df * df / (denom * denom)
            jac[:, 3 + 3 * k] = shape
        r = (model - counts) * weights
        return r, jac * weights[:, None]

    return fn


def initialize_peaks(
    spectrum: Spectrum, n_peaks: int, min_separation_samples: int | None = None
) -> list[LorentzianPeak]:
    """Seed peaks from the strongest local maxima above the noise floor.

    Candidates are local maxima exceeding baseline + 3*MAD with prominence
    above 3*MAD, thinned so that no two sit within ``min_separation_samples``
    of each other (shot-noise wiggles riding on one real peak are local
    maxima too; without thinning they can displace a genuine peak from the
    top-n). The default separation adapts to the grid, n_samples // 50.
    The strongest ``n_peaks`` win, lower frequency first on ties; widths
    seed at twice the sample spacing.
    """
    if n_peaks < 1:
        raise DomainError("n_peaks must be at least 1")
    freq = spectrum.frequency_ghz
    counts = spectrum.counts
    baseline = float(np.median(counts))
    noise = float(np.median(np.abs(counts - baseline)))
    threshold = baseline + 3.0 * noise
    if min_separation_samples is None:
        min_separation_samples = max(1, counts.size // 50)

    candidates, _ = find_peaks(
        counts,
        height=threshold,
        prominence=3.0 * noise,
        distance=max(1, int(min_separation_samples)),
    )
    if candidates.size < n_peaks:
        raise DomainError(
            f"found {candidates.size} candidate peaks, {n_peaks} requested"
        )
    ranked = sorted(candidates, key=lambda i: (-counts[i], freq[i]))
    chosen = sorted(ranked[:n_peaks], key=lambda i: freq[i])
    width = 2.0 * float(np.median(np.diff(freq)))
    return [
        LorentzianPeak(
            center_ghz=float(freq[i]),
            fwhm_ghz=width,
            amplitude=max(float(counts[i] - baseline), 1e-12),
        )
        for i in chosen
    ]


def fit_lorentzian_sum(
    spectrum: Spectrum,
    n_peaks: int,
    init: list[LorentzianPeak] | None = None,
    poisson_weighting: bool = False,
) -> LorentzianFit:
    """Fit ``n_peaks`` Lorentzians plus a constant baseline to a spectrum.

    Unweighted least squares by default; with ``poisson_weighting`` each
    residual is scaled by 1/sqrt(max(count, 1)).
    """
    if n_peaks < 1:
        raise DomainError("n_peaks must be at least 1")
    if spectrum.frequency_ghz.size < 3 * n_peaks + 1:
        raise DomainError("spectrum too short: needs at least 3*n_peaks + 1 samples")
    if init is None:
        init = initialize_peaks(spectrum, n_peaks)
    if len(init) != n_peaks:
        raise DomainError("init must provide one seed per requested peak")
    centers = [p.center_ghz for p in init]
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            if centers[i] == centers[j]:
                raise DegenerateInputError(
                    f"two initial centers coincide at {centers[i]} GHz"
                )

    freq = spectrum.frequency_ghz
    counts = spectrum.counts
    weights = (
        1.0 / np.sqrt(np.maximum(counts, 1.0)) if poisson_weighting else np.ones_like(counts)
    )
    p0 = np.empty(1 + 3 * n_peaks)
    p0[0] = float(np.median(counts))
    for k, peak in enumerate(init):
        p0[1 + 3 * k : 4 + 3 * k] = (peak.center_ghz, peak.fwhm_ghz, peak.amplitude)

    fn = _lorentzian_residual_jacobian(freq, counts, weights)
    # The initializer's width seed is deliberately narrow (it only knows the
    # sample spacing); scan a common width multiplier for the best start.
    best_p, best_cost = p0, float(fn(p0)[0] @ fn(p0)[0])
    for mult in (2.0, 4.0, 8.0, 16.0, 32.0, 64.0):
        trial = p0.copy()
        trial[2::3] *= mult
        trial_cost = float(fn(trial)[0] @ fn(trial)[0])
        if trial_cost < best_cost:
            best_p, best_cost = trial, trial_cost
    params, jac, cost, n_iter = _lm_minimize(fn, best_p)
    cov = _covariance(jac, cost, freq.size)

    # Sort peaks by center and permute the covariance to match.
    triples = params[1:].reshape(-1, 3)
    order = np.argsort(triples[:, 0])
    perm = np.concatenate(([0], (1 + 3 * order[:, None] + np.arange(3)).ravel()))
    cov = cov[np.ix_(perm, perm)]

    peaks = []
    warnings = []
    data_scale = float(counts.max() - counts.min())
    for rank, k in enumerate(order):
        c, w, a = triples[k]
        if a <= 0 or a < 1e-3 * max(data_scale, 1e-300):
            warnings.append(
                f"peak {rank} at {c:.6g} GHz has near-zero amplitude {a:.3g}"
            )
        peaks.append(
            LorentzianPeak(
                center_ghz=float(c),
                fwhm_ghz=float(abs(w)) if w != 0 else 1e-300,
                amplitude=float(a) if a > 0 else 1e-300,
            )
        )
    model = lorentzian_sum(freq, params)
    residual_rms = float(np.sqrt(np.mean((model - counts) ** 2)))
    return LorentzianFit(
        peaks=tuple(peaks),
        baseline=float(params[0]),
        residual_rms=residual_rms,
        covariance=cov,
        n_iterations=n_iter,
        warnings=tuple(warnings),
    )


def load_spectrum(source) -> Spectrum:
    """Read a spectrum from CSV with header ``frequency_ghz,counts``.

    ``source`` may be a path or an open text stream. Lines starting with
    '#' are ignored; parse failures report their 1-based line number.
    """
    lines = _read_lines(source)
    header = None
    freqs: list[float] = []
    counts: list[float] = []
    for lineno, raw in lines:
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if header is None:
            header = [c.strip() for c in text.split(",")]
            if header != ["frequency_ghz", "counts"]:
                raise ParseError("expected header 'frequency_ghz,counts'", line=lineno)
            continue
        cells = text.split(",")
        if len(cells) != 2:
            raise ParseError(f"expected 2 columns, got {len(cells)}", line=lineno)
        try:
            freqs.append(float(cells[0]))
            counts.append(float(cells[1]))
        except ValueError:
            raise ParseError(f"non-numeric row {text!r}", line=lineno) from None
    if header is None:
        raise ParseError("empty file: no header found")
    if not freqs:
        raise ParseError("no data rows after the header")
    return Spectrum(np.array(freqs), np.array(counts))


def write_spectrum(path, spectrum: Spectrum, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if metadata:
            for key, value in metadata.items():
                fh.write(f"# {key}={value}\n")
        fh.write("frequency_ghz,counts\n")
        for f, c in zip(spectrum.frequency_ghz, spectrum.counts):
            fh.write(f"{float(f)!r},{float(c)!r}\n")


# ---------------------------------------------------------------------------
# Scan images: 2D Gaussian spot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PsfImage:
    """A photon-count scan image on a square pixel grid.

    ``counts[i, j]`` sits at x = origin[0] + j*pixel_size_nm,
    y = origin[1] + i*pixel_size_nm.
    """

    pixel_size_nm: float
    counts: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.pixel_size_nm <= 0:
            raise DomainError("pixel size must be positive")
        counts = np.asarray(self.counts, dtype=float)
        if counts.ndim != 2 or min(counts.shape) < 5:
            raise DomainError("image must be a 2-d grid of at least 5x5 pixels")
        if counts.min() < 0:
            raise DomainError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def coordinates(self):
        ny, nx = self.counts.shape
        x = self.origin[0] + self.pixel_size_nm * np.arange(nx)
        y = self.origin[1] + self.pixel_size_nm * np.arange(ny)
        return np.meshgrid(x, y)


@dataclass(frozen=True)
class LocalizationResult:
    """Gaussian-spot fit: center and its standard error in nm.

    ``precision`` is the quadrature mean sqrt((ex^2 + ey^2)/2) of the two
    center standard errors. ``covariance`` is ordered (amplitude, x0, y0,
    sx, sy, offset).
    """

    center_nm: tuple[float, float]
    sigma_psf_nm: tuple[float, float]
    amplitude: float
    offset: float
    std_error_center_nm: tuple[float, float]
    precision_nm: float
    covariance: np.ndarray
    residual_rms: float
    n_iterations: int


def gaussian_psf(xx, yy, params):
    """A*exp(-((x-x0)^2/(2 sx^2) + (y-y0)^2/(2 sy^2))) + offset."""
    a, x0, y0, sx, sy, offset = params
    gx = (xx - x0) / sx
    gy = (yy - y0) / sy
    return a * np.exp(-0.5 * (gx * gx + gy * gy)) + offset


def _psf_residual_jacobian(xx, yy, counts, weights):
    x = xx.ravel()
    y = yy.ravel()
    z = counts.ravel()
    w = weights.ravel()

    def fn(params):
        a, x0, y0, sx, sy, offset = params
        dx = (x - x0) / sx
        dy = (y - y0) / sy
        core = np.exp(-0.5 * (dx * dx + dy * dy))
        model = a * core + offset
        jac = np.empty((x.size, 6))
        jac[:, 0] = core
        jac[:, 1] = a * core * dx / sx
        jac[:, 2] = a * core * dy / sy
        jac[:, 3] = a * core * dx * dx / sx
        jac[:, 4] = a * core * dy * dy / sy
        jac[:, 5] = 1.0
        return (model - z) * w, jac * w[:, None]

    return fn


def _psf_moments_init(image: PsfImage):
    counts = image.counts
    xx, yy = image.coordinates()
    border = np.concatenate([counts[0, :], counts[-1, :], counts[1:-1, 0], counts[1:-1, -1]])
    offset = float(np.median(border))
    weight = np.clip(counts - offset, 0.0, None)
    total = weight.sum()
    if total <= 0:
        # Flat image: start from the grid center.
        x0 = float(xx.mean())
        y0 = float(yy.mean())
        s = image.pixel_size_nm * counts.shape[0] / 4.0
        return np.array([max(counts.max() - offset, 1e-12), x0, y0, s, s, offset])
    x0 = float((weight * xx).sum() / total)
    y0 = float((weight * yy).sum() / total)
    sx = math.sqrt(max(float((weight * (xx - x0) ** 2).sum() / total), image.pixel_size_nm**2 / 12))
    sy = math.sqrt(max(float((weight * (yy - y0) ** 2).sum() / total), image.pixel_size_nm**2 / 12))
    return np.array([max(counts.max() - offset, 1e-12), x0, y0, sx, sy, offset])


def fit_gaussian_psf(image: PsfImage, init=None, poisson_weighting: bool = False) -> LocalizationResult:
    """Localize a spot by fitting the anisotropic Gaussian model.

    ``init`` may supply a 6-vector (amplitude, x0, y0, sx, sy, offset);
    otherwise moments of the background-subtracted image seed the fit.
    Unweighted by default; ``poisson_weighting`` scales each residual by
    1/sqrt(max(count, 1)).
    """
    if image.counts.max() == 0.0:
        raise DomainError("image is identically zero")
    p0 = np.asarray(init, dtype=float) if init is not None else _psf_moments_init(image)
    if p0.shape != (6,):
        raise DomainError("init must be (amplitude, x0, y0, sx, sy, offset)")
    xx, yy = image.coordinates()
    weights = (
        1.0 / np.sqrt(np.maximum(image.counts, 1.0))
        if poisson_weighting
        else np.ones_like(image.counts)
    )
    fn = _psf_residual_jacobian(xx, yy, image.counts, weights)
    params, jac, cost, n_iter = _lm_minimize(fn, p0)
    cov = _covariance(jac, cost, image.counts.size)

    a, x0, y0, sx, sy, offset = params
    ex = math.sqrt(max(cov[1, 1], 0.0))
    ey = math.sqrt(max(cov[2, 2], 0.0))
    return LocalizationResult(
        center_nm=(float(x0), float(y0)),
        sigma_psf_nm=(float(abs(sx)), float(abs(sy))),
        amplitude=float(a),
        offset=float(offset),
        std_error_center_nm=(ex, ey),
        precision_nm=math.sqrt(0.5 * (ex * ex + ey * ey)),
        covariance=cov,
        residual_rms=float(np.sqrt(cost / image.counts.size)),
        n_iterations=n_iter,
    )


def load_psf_image(source) -> PsfImage:
    """Read a scan image from the text format.

    First non-comment line: ``pixel_size_nm=<f>,origin_x_nm=<f>,origin_y_nm=<f>``
    followed by comma-separated count rows.
    """
    lines = _read_lines(source)
    meta = None
    rows: list[list[float]] = []
    for lineno, raw in lines:
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        if meta is None:
            fields = {}
            for cell in text.split(","):
                if "=" not in cell:
                    raise ParseError(f"bad metadata field {cell!r}", line=lineno)
                key, _, value = cell.partition("=")
                try:
                    fields[key.strip()] = float(value)
                except ValueError:
                    raise ParseError(f"non-numeric metadata {cell!r}", line=lineno) from None
            missing = {"pixel_size_nm", "origin_x_nm", "origin_y_nm"} - fields.keys()
            if missing:
                raise ParseError(f"metadata missing {sorted(missing)}", line=lineno)
            meta = fields
            continue
        try:
            rows.append([float(c) for c in text.split(",")])
        except ValueError:
            raise ParseError(f"non-numeric row {text!r}", line=lineno) from None
    if meta is None:
        raise ParseError("empty file: no metadata line found")
    if not rows:
        raise ParseError("no count rows after the metadata line")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ParseError("count rows have inconsistent lengths")
    return PsfImage(
        pixel_size_nm=meta["pixel_size_nm"],
        counts=np.array(rows),
        origin=(meta["origin_x_nm"], meta["origin_y_nm"]),
    )


def write_psf_image(path, image: PsfImage, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if metadata:
            for key, value in metadata.items():
                fh.write(f"# {key}={value}\n")
        fh.write(
            f"pixel_size_nm={image.pixel_size_nm!r},"
            f"origin_x_nm={image.origin[0]!r},origin_y_nm={image.origin[1]!r}\n"
        )
        for row in image.counts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_lines(source):
    """Yield (1-based line number, line) from a path or text stream."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            return list(enumerate(fh.readlines(), start=1))
    return list(enumerate(source, start=1))
