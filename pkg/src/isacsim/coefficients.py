"""Channel-coefficient evaluation for every propagation case.

A coefficient is the product
    gamma * F_rx^T C F_tx * L_tx * L_rx * prod_j D_j(t)
with gamma the (complex) gain/phase factor, F the antenna field patterns at
the departure/arrival angles, C the 2x2 polarization coupling matrix, L the
antenna-element spatial phase terms and D_j Doppler factors, one per moving
entity involved in the path.

Scalar per-path contexts (RayContext) keep the case structure explicit for
testing; vectorized helpers at the bottom serve the tap-assembly hot path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import spherical_unit, wrap_azimuth

BACKGROUND_CASES = ("LoS_back", "NLoS_back")
TARGET_CASES = ("LoS_tar", "SNLoS1", "DNLoS1", "SNLoS2", "DNLoS2",
                "SNLoS3", "DNLoS3")
CASE_LABELS = BACKGROUND_CASES + TARGET_CASES


class MissingContextError(ValueError):
    """Ray context lacks a field required by the requested case."""


class UnknownCaseError(ValueError):
    pass


@dataclass(frozen=True)
class FieldPattern:
    """Antenna element field pattern, vertical polarization.

    "isotropic" returns (1, 0); "tr38901_element" is the standard single
    sector element (65 deg half-power beamwidths, 30 dB floors, 8 dBi peak)
    with the given boresight azimuth.
    """
    kind: str = "isotropic"
    boresight_azimuth: float = 0.0

    def evaluate(self, zenith, azimuth):
        """(F_theta, F_phi) at the given angles; broadcasts over arrays."""
        zenith = np.asarray(zenith, dtype=float)
        azimuth = np.asarray(azimuth, dtype=float)
        if self.kind == "isotropic":
            return np.ones_like(zenith), np.zeros_like(zenith)
        if self.kind == "tr38901_element":
            theta_deg = np.degrees(zenith)
            phi_deg = np.degrees(wrap_azimuth(azimuth - self.boresight_azimuth))
            a_v = -np.minimum(12.0 * ((theta_deg - 90.0) / 65.0) ** 2, 30.0)
            a_h = -np.minimum(12.0 * (phi_deg / 65.0) ** 2, 30.0)
            a_db = -np.minimum(-(a_v + a_h), 30.0) + 8.0
            return np.sqrt(10.0 ** (a_db / 10.0)), np.zeros_like(zenith)
        raise ValueError(f"unknown field pattern kind {self.kind!r}")


def cpm_los() -> np.ndarray:
    """Polarization coupling matrix of a specular (LoS) path."""
    return np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def cpm_nlos(kappa, phases) -> np.ndarray:
    """Polarization coupling matrix C(kappa, Phi) of scattered paths.

    kappa: linear cross-polarization ratio(s), shape [...];
    phases: initial phases, shape [..., 4] ordered (tt, tp, pt, pp).
    Returns [..., 2, 2] complex.
    """
    kappa = np.asarray(kappa, dtype=float)
    phases = np.asarray(phases, dtype=float)
    inv = np.sqrt(1.0 / kappa)
    out = np.empty(kappa.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(1j * phases[..., 0])
    out[..., 0, 1] = inv * np.exp(1j * phases[..., 1])
    out[..., 1, 0] = inv * np.exp(1j * phases[..., 2])
    out[..., 1, 1] = np.exp(1j * phases[..., 3])
    return out


def spatial_phase(direction, element_offset, wavelength: float) -> complex:
    """exp(j 2 pi (r_hat . d) / lambda) for one antenna element offset."""
    d = np.dot(np.asarray(direction, float), np.asarray(element_offset, float))
    return complex(np.exp(2j * np.pi * d / wavelength))


def doppler_phase(direction, velocity, t: float, wavelength: float) -> complex:
    """exp(j 2 pi (r_hat . v) t / lambda) for one moving entity."""
    f = np.dot(np.asarray(direction, float), np.asarray(velocity, float)) / wavelength
    return complex(np.exp(2j * np.pi * f * t))


@dataclass
class RayContext:
    """Everything needed to evaluate one path's coefficient vs time."""
    case: str
    gamma: complex                       # gain/phase product for the case
    cpm: np.ndarray                      # 2x2 polarization coupling
    omega_tx: tuple[float, float]        # (zenith, azimuth) at the Tx
    omega_rx: tuple[float, float]        # (zenith, azimuth) at the Rx
    wavelength: float
    element_tx: np.ndarray = field(default_factory=lambda: np.zeros(3))
    element_rx: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # (unit direction, velocity) per Doppler factor
    dopplers: list = field(default_factory=list)
    pattern_tx: FieldPattern = field(default_factory=FieldPattern)
    pattern_rx: FieldPattern = field(default_factory=FieldPattern)

    def doppler_hz(self) -> float:
        """Net Doppler shift of the path."""
        return sum(float(np.dot(r, v)) / self.wavelength for r, v in self.dopplers)


def evaluate(ctx: RayContext, t) -> complex | np.ndarray:
    """Coefficient value(s) at time(s) t."""
    r_tx = spherical_unit(*ctx.omega_tx)
    r_rx = spherical_unit(*ctx.omega_rx)
    ft_t, ft_p = ctx.pattern_tx.evaluate(*ctx.omega_tx)
    fr_t, fr_p = ctx.pattern_rx.evaluate(*ctx.omega_rx)
    c = ctx.cpm
    gain = (fr_t * (c[0, 0] * ft_t + c[0, 1] * ft_p)
            + fr_p * (c[1, 0] * ft_t + c[1, 1] * ft_p))
    l_tx = spatial_phase(r_tx, ctx.element_tx, ctx.wavelength)
    l_rx = spatial_phase(r_rx, ctx.element_rx, ctx.wavelength)
    base = ctx.gamma * gain * l_tx * l_rx
    t = np.asarray(t, dtype=float)
    phase = np.exp(2j * np.pi * ctx.doppler_hz() * t)
    out = base * phase
    return complex(out) if out.ndim == 0 else out


def _require(kwargs, keys, case):
    missing = [k for k in keys if kwargs.get(k) is None]
    if missing:
        raise MissingContextError(f"case {case}: missing context {missing}")
    return [kwargs[k] for k in keys]


def background_context(case: str, *, wavelength, omega_tx=None, omega_rx=None,
                       distance=None, ray_power=None, xpr=None, phases=None,
                       element_tx=None, element_rx=None, v_tx=None, v_rx=None,
                       pattern_tx=None, pattern_rx=None) -> RayContext:
    """Build the ray context of a background-channel path."""
    if case not in BACKGROUND_CASES:
        raise UnknownCaseError(f"not a background case: {case}")
    kwargs = dict(omega_tx=omega_tx, omega_rx=omega_rx, distance=distance,
                  ray_power=ray_power, xpr=xpr, phases=phases)
    v_tx = np.zeros(3) if v_tx is None else np.asarray(v_tx, float)
    v_rx = np.zeros(3) if v_rx is None else np.asarray(v_rx, float)
    if case == "LoS_back":
        omega_tx, omega_rx, distance = _require(
            kwargs, ["omega_tx", "omega_rx", "distance"], case)
        gamma = np.exp(-2j * np.pi * distance / wavelength)
        cpm = cpm_los()
    else:
        omega_tx, omega_rx, ray_power, xpr, phases = _require(
            kwargs, ["omega_tx", "omega_rx", "ray_power", "xpr", "phases"], case)
        gamma = complex(np.sqrt(ray_power))
        cpm = cpm_nlos(xpr, np.asarray(phases))
    ctx = RayContext(
        case=case, gamma=gamma, cpm=cpm, omega_tx=tuple(omega_tx),
        omega_rx=tuple(omega_rx), wavelength=wavelength,
        element_tx=np.zeros(3) if element_tx is None else np.asarray(element_tx, float),
        element_rx=np.zeros(3) if element_rx is None else np.asarray(element_rx, float),
        pattern_tx=pattern_tx or FieldPattern(),
        pattern_rx=pattern_rx or FieldPattern(),
    )
    r_tx = spherical_unit(*ctx.omega_tx)
    r_rx = spherical_unit(*ctx.omega_rx)
    ctx.dopplers = [(r_tx, v_tx), (r_rx, v_rx)]
    return ctx


def background_coefficient(case: str, ctx: RayContext, t) -> complex | np.ndarray:
    if case not in BACKGROUND_CASES:
        raise UnknownCaseError(f"not a background case: {case}")
    if ctx.case != case:
        raise MissingContextError(f"context built for {ctx.case}, not {case}")
    return evaluate(ctx, t)


# Required scalar gain factors per target case: (needs_distance, power keys,
# rcs keys).  sigma_sp is the target scattering-point RCS; sigma_1/sigma_2
# the deterministic-cluster RCS on the tx-target / target-rx link.
_TARGET_GAMMA = {
    "LoS_tar": ((), ("sigma_sp",)),
    "SNLoS1": (("power_2",), ("sigma_sp",)),
    "DNLoS1": (("power_2",), ("sigma_sp", "sigma_2")),
    "SNLoS2": (("power_1",), ("sigma_sp",)),
    "DNLoS2": (("power_1",), ("sigma_sp", "sigma_1")),
    "SNLoS3": (("power_1", "power_2"), ("sigma_sp",)),
    "DNLoS3": (("power_1", "power_2"), ("sigma_sp", "sigma_1", "sigma_2")),
}


def target_gamma(case: str, *, sigma_sp=None, sigma_1=None, sigma_2=None,
                 power_1=None, power_2=None, distance=None,
                 wavelength=None) -> complex:
    """Gamma factor of a target-channel case; LoS carries the bistatic
    distance phase alpha(d) = exp(-j 2 pi d / lambda)."""
    if case not in _TARGET_GAMMA:
        raise UnknownCaseError(f"not a target case: {case}")
    power_keys, rcs_keys = _TARGET_GAMMA[case]
    kwargs = dict(sigma_sp=sigma_sp, sigma_1=sigma_1, sigma_2=sigma_2,
                  power_1=power_1, power_2=power_2)
    vals = _require(kwargs, rcs_keys + power_keys, case)
    mag = float(np.sqrt(np.prod(vals)))
    if case == "LoS_tar":
        if distance is None or wavelength is None:
            raise MissingContextError("LoS_tar: missing bistatic distance/wavelength")
        return mag * np.exp(-2j * np.pi * distance / wavelength)
    return complex(mag)


def target_context(case: str, *, wavelength, omega_tx, omega_rx,
                   gamma=None, cpm=None, dopplers=None,
                   element_tx=None, element_rx=None,
                   pattern_tx=None, pattern_rx=None, **gamma_kwargs) -> RayContext:
    """Build the ray context of a target-channel path.

    ``dopplers`` is the case's list of (unit direction, velocity) pairs; the
    LoS case takes exactly the tx and rx factors (cluster Doppler is unity),
    single-bounce cases three factors, double-bounce cases four.
    """
    if case not in TARGET_CASES:
        raise UnknownCaseError(f"not a target case: {case}")
    if gamma is None:
        gamma = target_gamma(case, wavelength=wavelength, **gamma_kwargs)
    if cpm is None:
        if case == "LoS_tar":
            cpm = cpm_los()
        else:
            raise MissingContextError(f"case {case}: missing polarization matrix")
    expected = {"LoS_tar": 2, "SNLoS1": 3, "DNLoS1": 3, "SNLoS2": 3,
                "DNLoS2": 3, "SNLoS3": 4, "DNLoS3": 4}[case]
    dopplers = list(dopplers or [])
    if len(dopplers) != expected:
        raise MissingContextError(
            f"case {case}: expected {expected} Doppler factors, got {len(dopplers)}")
    return RayContext(
        case=case, gamma=gamma, cpm=np.asarray(cpm, dtype=complex),
        omega_tx=tuple(omega_tx), omega_rx=tuple(omega_rx), wavelength=wavelength,
        element_tx=np.zeros(3) if element_tx is None else np.asarray(element_tx, float),
        element_rx=np.zeros(3) if element_rx is None else np.asarray(element_rx, float),
        dopplers=dopplers,
        pattern_tx=pattern_tx or FieldPattern(),
        pattern_rx=pattern_rx or FieldPattern(),
    )


def target_coefficient(case: str, ctx: RayContext, t) -> complex | np.ndarray:
    if case not in TARGET_CASES:
        raise UnknownCaseError(f"not a target case: {case}")
    if ctx.case != case:
        raise MissingContextError(f"context built for {ctx.case}, not {case}")
    return evaluate(ctx, t)


# ---------------------------------------------------------------------------
# vectorized helpers for tap assembly (same formulas, array shapes)
# ---------------------------------------------------------------------------

def element_phase_matrix(zenith, azimuth, offsets, wavelength) -> np.ndarray:
    """exp(j 2 pi (r_hat_p . d_e) / lambda) for paths x elements -> [P, E]."""
    dirs = spherical_unit(np.asarray(zenith), np.asarray(azimuth))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    return np.exp(2j * np.pi * (dirs @ offsets.T) / wavelength)


def doppler_frequency(zenith, azimuth, velocity, wavelength) -> np.ndarray:
    """(r_hat . v) / lambda per path; velocity broadcasts to [P, 3]."""
    dirs = spherical_unit(np.asarray(zenith), np.asarray(azimuth))
    velocity = np.asarray(velocity, dtype=float)
    return (dirs @ velocity.T if velocity.ndim == 1 else
            np.sum(dirs * velocity, axis=-1)) / wavelength


def pattern_cpm_gain(pattern_rx: FieldPattern, zen_rx, azi_rx, cpm,
                     pattern_tx: FieldPattern, zen_tx, azi_tx) -> np.ndarray:
    """F_rx^T C F_tx per path; cpm has shape [P, 2, 2]."""
    ft_t, ft_p = pattern_tx.evaluate(np.asarray(zen_tx), np.asarray(azi_tx))
    fr_t, fr_p = pattern_rx.evaluate(np.asarray(zen_rx), np.asarray(azi_rx))
    return (fr_t * (cpm[..., 0, 0] * ft_t + cpm[..., 0, 1] * ft_p)
            + fr_p * (cpm[..., 1, 0] * ft_t + cpm[..., 1, 1] * ft_p))
