"""Metasurface cascade, correlated Rician channel and achievable rate.

Layer order is physical on both sides. The TX stack maps the S sources
onto layer 1 (W^1, M x S), then hops layer to layer (W^2..W^L, M x M):

    X = Phi^L W^L ... Phi^2 W^2 Phi^1 W^1                (M x S)

The signal reaches RX layer 1 first, hops through U^2..U^K (N x N) and
leaves layer K through the output map U_out (S x N):

    Y = U_out Psi^K U^K ... Psi^2 U^2 Psi^1              (S x N)

and the end-to-end matrix is H = Y G X (S x S).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import LinkScenario
from .geometry import GeometryReport, geometry_report, grid_coords, spacing_matrix

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


class DegenerateGeometryError(ValueError):
    pass


def diffraction_coefficient(d, cos_angle, area, wavelength):
    """Complex gain between two atoms a distance ``d`` apart.

    (C cos(chi) / d) (1 / (2 pi d) - j / lambda) exp(j 2 pi d / lambda)
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DegenerateGeometryError("inter-atom distance must be positive")
    return (area * np.asarray(cos_angle) / d) * (1.0 / (TWO_PI * d) - 1j / wavelength) \
        * np.exp(1j * TWO_PI * d / wavelength)


def build_coefficient_matrices(scenario: LinkScenario, geometry: GeometryReport | None = None):
    """Return ``(W, U, U_out)``.

    ``W`` is the list [W^1 .. W^L]; ``U`` is [U^2 .. U^K] (empty for K=1).
    Obliquity is d_gap / d for every link.
    """
    g = geometry or geometry_report(scenario)
    lam = scenario.wavelength

    def coeff(dist, gap, area):
        return diffraction_coefficient(dist, gap / dist, area, lam)

    w_in = coeff(g.source_tx, g.gap_tx, scenario.atom_area_tx)
    w_hop = coeff(g.hop_tx, g.gap_tx, scenario.atom_area_tx)
    u_hop = coeff(g.hop_rx, g.gap_rx, scenario.atom_area_rx)
    u_out = coeff(g.source_rx, g.gap_rx, scenario.atom_area_rx).T
    W = [w_in] + [w_hop.copy() for _ in range(scenario.layers_tx - 1)]
    U = [u_hop.copy() for _ in range(scenario.layers_rx - 1)]
    for mat in (*W, *U, u_out):
        if not np.all(np.isfinite(mat)):
            raise DegenerateGeometryError("non-finite coefficient")
    return W, U, u_out


def sinc_correlation(spacing: np.ndarray, wavelength: float) -> np.ndarray:
    return np.sinc(2.0 * spacing / wavelength)


def spatial_correlation(scenario: LinkScenario):
    r_tx = spacing_matrix(scenario.row_size_tx, scenario.atom_pitch_tx)
    r_rx = spacing_matrix(scenario.row_size_rx, scenario.atom_pitch_rx)
    return sinc_correlation(r_tx, scenario.wavelength), sinc_correlation(r_rx, scenario.wavelength)


def psd_sqrt(R: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Symmetric square root with negative eigenvalues clipped to zero."""
    R = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(R)
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -tol * scale:
        raise ValueError(f"correlation matrix not PSD (min eigenvalue {w.min():.3e})")
    if w.min() < 0:
        log.debug("clipped negative eigenvalue %.3e", w.min())
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T


def path_loss_db(d: float, scenario: LinkScenario) -> float:
    if d <= 0:
        raise ValueError("distance must be positive")
    if scenario.ref_pathloss_db is None:
        ref = 20.0 * np.log10(4 * np.pi * scenario.ref_distance / scenario.wavelength)
    else:
        ref = scenario.ref_pathloss_db
    return float(ref + 10.0 * scenario.pathloss_exponent * np.log10(d / scenario.ref_distance))


def channel_gain(scenario: LinkScenario) -> float:
    return 10.0 ** (-path_loss_db(scenario.link_distance, scenario) / 10.0)


def los_matrix(scenario: LinkScenario) -> np.ndarray:
    """Line-of-sight component, N x M.

    ``ones`` is the rank-one all-ones matrix. ``steering`` is the outer
    product of planar-array responses for a broadside link, with the
    phase of each atom set by its in-plane offset from the array centre
    along the link axis (a spherical-wavefront correction at range d).
    """
    N, M = scenario.atoms_rx, scenario.atoms_tx
    if scenario.los_mode == "ones":
        return np.ones((N, M), dtype=complex)
    k = TWO_PI / scenario.wavelength
    d = scenario.link_distance

    def response(per_row, pitch):
        row, col = grid_coords(per_row)
        centre = (per_row + 1) / 2
        rho2 = ((row - centre) * pitch) ** 2 + ((col - centre) * pitch) ** 2
        return np.exp(-1j * k * rho2 / (2 * d))

    return np.outer(response(scenario.row_size_rx, scenario.atom_pitch_rx),
                    response(scenario.row_size_tx, scenario.atom_pitch_tx))


def draw_small_scale(scenario: LinkScenario, rng: np.random.Generator) -> np.ndarray:
    """Uncorrelated Rician matrix G_bar (N x M) including the path gain."""
    N, M = scenario.atoms_rx, scenario.atoms_tx
    kappa = scenario.rician_factor
    nlos = (rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))) / np.sqrt(2.0)
    if np.isinf(kappa):
        los_w, nlos_w = 1.0, 0.0
    else:
        los_w, nlos_w = np.sqrt(kappa / (1 + kappa)), np.sqrt(1 / (1 + kappa))
    return np.sqrt(channel_gain(scenario)) * (los_w * los_matrix(scenario) + nlos_w * nlos)


def draw_fading(scenario: LinkScenario, rng: np.random.Generator, correlation=None):
    """Return ``(G_bar, G)`` with G = R_RX^(1/2) G_bar R_TX^(1/2)."""
    R_tx, R_rx = correlation if correlation is not None else spatial_correlation(scenario)
    G_bar = draw_small_scale(scenario, rng)
    return G_bar, psd_sqrt(R_rx) @ G_bar @ psd_sqrt(R_tx)


@dataclass(frozen=True)
class PhaseConfig:
    tx: np.ndarray  # (L, M) radians in (0, 2 pi]
    rx: np.ndarray  # (K, N)

    @property
    def phi(self) -> np.ndarray:
        return np.exp(1j * self.tx)

    @property
    def psi(self) -> np.ndarray:
        return np.exp(1j * self.rx)

    @classmethod
    def from_coefficients(cls, phi: np.ndarray, psi: np.ndarray) -> "PhaseConfig":
        return cls(wrap_phase(np.angle(phi)), wrap_phase(np.angle(psi)))

    @classmethod
    def random(cls, scenario: LinkScenario, rng: np.random.Generator) -> "PhaseConfig":
        # uniform on (0, 2 pi]
        tx = TWO_PI * (1.0 - rng.random((scenario.layers_tx, scenario.atoms_tx)))
        rx = TWO_PI * (1.0 - rng.random((scenario.layers_rx, scenario.atoms_rx)))
        return cls(tx, rx)

    @classmethod
    def zeros(cls, scenario: LinkScenario) -> "PhaseConfig":
        return cls(np.full((scenario.layers_tx, scenario.atoms_tx), TWO_PI),
                   np.full((scenario.layers_rx, scenario.atoms_rx), TWO_PI))

    def with_layer(self, side: str, p: int, phases: np.ndarray) -> "PhaseConfig":
        tx, rx = self.tx.copy(), self.rx.copy()
        (tx if side == "tx" else rx)[p - 1] = wrap_phase(phases)
        return PhaseConfig(tx, rx)


def wrap_phase(theta) -> np.ndarray:
    """Map angles onto (0, 2 pi]."""
    t = np.mod(np.asarray(theta, dtype=float), TWO_PI)
    return np.where(t <= 0.0, TWO_PI, t)


@dataclass(frozen=True)
class ChannelState:
    """Coefficient matrices of one channel realisation (phases excluded)."""

    W: list
    U: list
    U_out: np.ndarray
    R_tx: np.ndarray
    R_rx: np.ndarray
    G_bar: np.ndarray
    G: np.ndarray
    gain: float
    meta: dict = field(default_factory=dict)

    @property
    def layers_tx(self) -> int:
        return len(self.W)

    @property
    def layers_rx(self) -> int:
        return len(self.U) + 1

    @property
    def num_streams(self) -> int:
        return self.W[0].shape[1]

    def tx_cascade(self, phases: PhaseConfig) -> np.ndarray:
        phi = phases.phi
        X = phi[0][:, None] * self.W[0]
        for l in range(1, self.layers_tx):
            X = phi[l][:, None] * (self.W[l] @ X)
        return X

    def rx_cascade(self, phases: PhaseConfig) -> np.ndarray:
        psi = phases.psi
        Y = self.U_out * psi[-1][None, :]
        for k in range(self.layers_rx - 1, 0, -1):
            Y = (Y @ self.U[k - 1]) * psi[k - 1][None, :]
        return Y


def build_channel(scenario: LinkScenario, rng: np.random.Generator) -> ChannelState:
    geometry = geometry_report(scenario)
    W, U, U_out = build_coefficient_matrices(scenario, geometry)
    R_tx, R_rx = spatial_correlation(scenario)
    G_bar, G = draw_fading(scenario, rng, (R_tx, R_rx))
    return ChannelState(W, U, U_out, R_tx, R_rx, G_bar, G, channel_gain(scenario),
                        meta={"los_mode": scenario.los_mode, "config_hash": scenario.config_hash()})


def assemble_H(phases: PhaseConfig, state: ChannelState) -> np.ndarray:
    if phases.tx.shape != (state.layers_tx, state.W[0].shape[0]):
        raise ValueError(f"TX phases {phases.tx.shape} do not match the channel")
    if phases.rx.shape != (state.layers_rx, state.U_out.shape[1]):
        raise ValueError(f"RX phases {phases.rx.shape} do not match the channel")
    return state.rx_cascade(phases) @ state.G @ state.tx_cascade(phases)


def snr_scale(scenario: LinkScenario) -> float:
    """Per-stream P / (S N0 B) for uniform power allocation."""
    return scenario.tx_power / (scenario.num_streams * scenario.noise_psd * scenario.bandwidth)


def rate_from_scale(H: np.ndarray, scale: float) -> float:
    if not np.all(np.isfinite(H)):
        raise ValueError("channel matrix has non-finite entries")
    S = H.shape[0]
    A = np.eye(S) + scale * (H @ H.conj().T)
    sign, logdet = np.linalg.slogdet(A)
    return max(float(logdet) / np.log(2.0), 0.0)


def achievable_rate(H: np.ndarray, scenario: LinkScenario) -> float:
    """log2 det(I + H Z H^H / (N0 B)) with Z = (P/S) I, in bit/s/Hz."""
    return rate_from_scale(H, snr_scale(scenario))


def batch_rate(H: np.ndarray, scale: float) -> np.ndarray:
    """Rates of a stack of channel matrices with shape (..., S, S)."""
    S = H.shape[-1]
    A = np.eye(S) + scale * (H @ np.conj(np.swapaxes(H, -1, -2)))
    _, logdet = np.linalg.slogdet(A)
    return np.maximum(logdet / np.log(2.0), 0.0)


# export -----------------------------------------------------------------------

def export_channel(state: ChannelState, path, phases: PhaseConfig | None = None) -> None:
    """Save all matrices to an ``.npz`` archive with layer labels."""
    arrays = {f"W{l + 1}": w for l, w in enumerate(state.W)}
    arrays.update({f"U{k + 2}": u for k, u in enumerate(state.U)})
    arrays.update(U_out=state.U_out, R_tx=state.R_tx, R_rx=state.R_rx,
                  G_bar=state.G_bar, G=state.G, gain=np.array(state.gain))
    if phases is not None:
        arrays.update(theta=phases.tx, xi=phases.rx, H=assemble_H(phases, state))
    labels = sorted(arrays)
    arrays["labels"] = np.array(labels)
    arrays["config_hash"] = np.array(state.meta.get("config_hash", ""))
    np.savez(path, **arrays)
