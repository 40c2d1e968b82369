"""Distances inside and between the two metasurface stacks.

Atoms are numbered 1..m_max^2 row by row; the TX sources (and RX sinks)
sit on a line offset by half a wavelength per stream, centred on the
layer.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .config import LinkScenario


@dataclass(frozen=True)
class AtomIndex:
    m: int
    row: int
    col: int
    per_row: int


def atom_index(m: int, per_row: int) -> AtomIndex:
    """Grid position of atom ``m`` (1-based) on a square layer."""
    if per_row < 1 or not 1 <= m <= per_row * per_row:
        raise IndexError(f"atom {m} outside a {per_row}x{per_row} grid")
    row = -(-m // per_row)
    col = (m - 1) % per_row + 1
    return AtomIndex(m, row, col, per_row)


def _side(scenario: LinkScenario, side: str):
    if side == "tx":
        return scenario.row_size_tx, scenario.atom_pitch_tx, scenario.layer_gap_tx
    if side == "rx":
        return scenario.row_size_rx, scenario.atom_pitch_rx, scenario.layer_gap_rx
    raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")


def source_to_layer_distance(s: int, idx: AtomIndex, scenario: LinkScenario, side: str = "tx") -> float:
    """Distance from stream ``s`` (1-based) to an atom of the outer layer."""
    S = scenario.num_streams
    if not 1 <= s <= S:
        raise IndexError(f"stream {s} outside 1..{S}")
    _, pitch, gap = _side(scenario, side)
    centre = (idx.per_row + 1) / 2
    a = (idx.row - centre) * pitch - (s - (S + 1) / 2) * scenario.wavelength / 2
    b = (idx.col - centre) * pitch
    return math.sqrt(a * a + b * b + gap * gap)


def in_plane_spacing(idx: AtomIndex, other: AtomIndex, pitch: float) -> float:
    return pitch * math.hypot(idx.row - other.row, idx.col - other.col)


def interlayer_distance(idx: AtomIndex, other: AtomIndex, scenario: LinkScenario, side: str = "tx") -> float:
    """Distance between atoms on two adjacent layers of the same stack."""
    if idx.per_row != other.per_row:
        raise ValueError("atoms belong to grids of different size")
    _, pitch, gap = _side(scenario, side)
    return math.hypot(in_plane_spacing(idx, other, pitch), gap)


# vectorised forms -------------------------------------------------------------

def grid_coords(per_row: int) -> tuple[np.ndarray, np.ndarray]:
    """1-based (row, col) of every atom, in flat order."""
    m = np.arange(1, per_row * per_row + 1)
    return -(-m // per_row), (m - 1) % per_row + 1


def spacing_matrix(per_row: int, pitch: float) -> np.ndarray:
    """In-plane spacings r[m, m'] for one layer."""
    row, col = grid_coords(per_row)
    return pitch * np.hypot(row[:, None] - row[None, :], col[:, None] - col[None, :])


def source_distance_matrix(scenario: LinkScenario, side: str = "tx") -> np.ndarray:
    """(atoms, S) distances between streams and the outer layer."""
    per_row, pitch, gap = _side(scenario, side)
    S = scenario.num_streams
    row, col = grid_coords(per_row)
    centre = (per_row + 1) / 2
    s = np.arange(1, S + 1)
    a = (row[:, None] - centre) * pitch - (s[None, :] - (S + 1) / 2) * scenario.wavelength / 2
    b = np.broadcast_to(((col - centre) * pitch)[:, None], a.shape)
    return np.sqrt(a**2 + b**2 + gap**2)


@dataclass(frozen=True)
class GeometryReport:
    source_tx: np.ndarray   # (M, S): d_{s,TX}[m, s]
    source_rx: np.ndarray   # (N, S): d_{RX,s}[n, s]
    spacing_tx: np.ndarray  # (M, M) in-plane r
    spacing_rx: np.ndarray  # (N, N)
    hop_tx: np.ndarray      # (M, M) adjacent-layer distances
    hop_rx: np.ndarray      # (N, N)
    gap_tx: float
    gap_rx: float
    d2: float

    def to_table(self) -> str:
        """Tab-separated dump, one row per atom pair / stream-atom pair."""
        buf = io.StringIO()
        buf.write("kind\tside\ti\tj\tspacing\tdistance\n")
        for side, src in (("tx", self.source_tx), ("rx", self.source_rx)):
            for i in range(src.shape[0]):
                for s in range(src.shape[1]):
                    buf.write(f"source\t{side}\t{i + 1}\t{s + 1}\t\t{src[i, s]!r}\n")
        for side, r, d in (("tx", self.spacing_tx, self.hop_tx), ("rx", self.spacing_rx, self.hop_rx)):
            n = r.shape[0]
            for i in range(n):
                for j in range(n):
                    buf.write(f"hop\t{side}\t{i + 1}\t{j + 1}\t{r[i, j]!r}\t{d[i, j]!r}\n")
        buf.write(f"# gap_tx={self.gap_tx!r} gap_rx={self.gap_rx!r} D2={self.d2!r}\n")
        return buf.getvalue()


def geometry_report(scenario: LinkScenario) -> GeometryReport:
    r_tx = spacing_matrix(scenario.row_size_tx, scenario.atom_pitch_tx)
    r_rx = spacing_matrix(scenario.row_size_rx, scenario.atom_pitch_rx)
    return GeometryReport(
        source_tx=source_distance_matrix(scenario, "tx"),
        source_rx=source_distance_matrix(scenario, "rx"),
        spacing_tx=r_tx,
        spacing_rx=r_rx,
        hop_tx=np.hypot(r_tx, scenario.layer_gap_tx),
        hop_rx=np.hypot(r_rx, scenario.layer_gap_rx),
        gap_tx=scenario.layer_gap_tx,
        gap_rx=scenario.layer_gap_rx,
        d2=transmission_delay_D2(scenario),
    )


def transmission_delay_D2(scenario: LinkScenario, path: str | None = None) -> float:
    """Worst-case in-stack transmission delay (seconds).

    ``path="worst"`` takes the largest inter-atom distance on every hop,
    which is attained by a corner-to-opposite-corner zig-zag chain and so
    equals the maximum over all atom chains. ``path="aligned"`` keeps the
    worst source leg but lets every interior hop go straight across.
    """
    path = path or scenario.d2_path
    if path not in ("worst", "aligned"):
        raise ValueError(f"unknown D2 path convention {path!r}")
    total = np.zeros(scenario.num_streams)
    for side, layers, speed in (
        ("tx", scenario.layers_tx, scenario.wave_speed_tx),
        ("rx", scenario.layers_rx, scenario.wave_speed_rx),
    ):
        per_row, pitch, gap = _side(scenario, side)
        source = source_distance_matrix(scenario, side).max(axis=0)
        if path == "worst":
            hop = math.hypot(pitch * math.sqrt(2) * (per_row - 1), gap)
        else:
            hop = gap
        total = total + (source + (layers - 1) * hop) / speed
    return float(total.max())
