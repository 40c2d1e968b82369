"""Phase-shift optimisation for the SIM link.

:class:`BCDPhaseOptimizer` alternates a per-layer semidefinite-relaxation
update of the phases with the closed-form propagation-delay update.
:class:`AOPhaseOptimizer` is the low-complexity reference: cyclic
per-atom search over a fixed phase grid.

Both follow the scikit-learn estimator protocol. ``fit`` takes a
:class:`~stacksim.channel.ChannelState` (one channel realisation) and
learns ``phases_``; ``transform`` returns the end-to-end matrix under the
learned phases and ``score`` its achievable rate.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import sdp
from .channel import (ChannelState, PhaseConfig, assemble_H, batch_rate, build_channel,
                      rate_from_scale, snr_scale)
from .config import LinkScenario, default_scenario, validate
from .geometry import transmission_delay_D2
from .snc import propagation_exponent, queueing_exponent

TWO_PI = 2.0 * np.pi
SWEEP_ORDERS = ("tx-rx", "rx-tx")


class FactorizationError(RuntimeError):
    pass


@dataclass
class LayerSubproblem:
    """H = left @ diag(v) @ right for the phases ``v`` of one layer."""

    side: str
    layer: int
    left: np.ndarray   # (S, a)
    right: np.ndarray  # (a, S)
    current: np.ndarray  # (a,) unit-modulus coefficients in use

    @property
    def atoms(self) -> int:
        return self.current.shape[0]

    def channel(self, v=None) -> np.ndarray:
        v = self.current if v is None else v
        return self.left @ (v[:, None] * self.right)

    def channels(self, V: np.ndarray) -> np.ndarray:
        """Stack of H for candidate rows of ``V`` (draws, a)."""
        return np.einsum("sa,da,at->dst", self.left, V, self.right, optimize=True)

    def objective(self, v) -> float:
        return float(np.linalg.norm(self.channel(v)) ** 2)


def _rel_err(A, B) -> float:
    return float(np.linalg.norm(A - B) / max(np.linalg.norm(B), 1e-300))


def factorize_layer(p: int, side: str, phases: PhaseConfig, state: ChannelState,
                    check: bool = True, tol: float = 1e-6) -> LayerSubproblem:
    """Split H around layer ``p`` (1-based) of the ``side`` stack."""
    if side == "tx":
        L = state.layers_tx
        if not 1 <= p <= L:
            raise IndexError(f"TX layer {p} outside 1..{L}")
        phi = phases.phi
        right = state.W[0]
        for l in range(1, p):
            right = state.W[l] @ (phi[l - 1][:, None] * right)
        left = state.rx_cascade(phases) @ state.G
        for l in range(L, p, -1):
            left = (left * phi[l - 1][None, :]) @ state.W[l - 1]
        current = phi[p - 1]
    elif side == "rx":
        K = state.layers_rx
        if not 1 <= p <= K:
            raise IndexError(f"RX layer {p} outside 1..{K}")
        psi = phases.psi
        left = state.U_out
        for k in range(K, p, -1):
            left = (left * psi[k - 1][None, :]) @ state.U[k - 2]
        right = state.G @ state.tx_cascade(phases)
        for k in range(1, p):
            right = state.U[k - 1] @ (psi[k - 1][:, None] * right)
        current = psi[p - 1]
    else:
        raise ValueError(f"side must be 'tx' or 'rx', got {side!r}")
    sub = LayerSubproblem(side, p, left, right, current.copy())
    if check:
        err = _rel_err(sub.channel(), assemble_H(phases, state))
        if err > tol:
            raise FactorizationError(f"{side} layer {p}: reconstruction error {err:.2e}")
    return sub


def lift_costs(sub: LayerSubproblem) -> list:
    """Per-stream (a+1) x (a+1) costs R_s = [[L_s L_s^H, 0], [0, 0]].

    L_s = conj(diag(left[s]) right), so that v^H L_s is the conjugate of
    row s of H and sum_s ||v^H L_s||^2 = ||H||_F^2.
    """
    a = sub.atoms
    costs = []
    for s in range(sub.left.shape[0]):
        lam = np.conj(sub.left[s][:, None] * sub.right)
        R = np.zeros((a + 1, a + 1), dtype=complex)
        R[:a, :a] = lam @ lam.conj().T
        costs.append(R)
    return costs


def lifted_factors(sub: LayerSubproblem) -> list:
    return [np.conj(sub.left[s][:, None] * sub.right) for s in range(sub.left.shape[0])]


@dataclass
class Randomization:
    v: np.ndarray
    score: float
    index: int           # -1 for the principal-eigenvector candidate
    scores: np.ndarray


def randomization_candidates(V: np.ndarray, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-modulus candidates (draws + 1, a); row 0 is the principal eigenvector."""
    V = 0.5 * (V + V.conj().T)
    w, P = np.linalg.eigh(V)
    B = P * np.sqrt(np.clip(w, 0.0, None))
    n = V.shape[0]
    r = (rng.standard_normal((draws, n)) + 1j * rng.standard_normal((draws, n))) / np.sqrt(2.0)
    raw = np.vstack([P[:, -1][None, :], r @ B.T])
    # redraw rows that hit a zero entry (probability zero)
    for i in range(1, raw.shape[0]):
        while np.any(np.abs(raw[i]) == 0):
            ri = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
            raw[i] = B @ ri
    head = raw[:, :-1]
    aux = raw[:, -1:]
    rot = np.where(np.abs(aux) > 0, aux / np.where(np.abs(aux) > 0, np.abs(aux), 1.0), 1.0)
    cand = head / rot
    mag = np.abs(cand)
    return np.where(mag > 0, cand / np.where(mag > 0, mag, 1.0), 1.0)


def gaussian_randomize(solution: sdp.SdpSolution, sub: LayerSubproblem, draws: int,
                       rng: np.random.Generator, score=None) -> Randomization:
    """Pick the best unit-modulus candidate drawn around the SDP solution.

    ``score`` maps a stack of candidates (k, a) to values to maximise; the
    default is the relaxed quadratic objective ||left diag(v) right||_F^2.
    """
    cands = randomization_candidates(solution.V, draws, rng)
    Hs = sub.channels(cands)
    if score is None:
        values = np.sum(np.abs(Hs) ** 2, axis=(1, 2))
    else:
        values = np.asarray(score(Hs), dtype=float)
    best = int(np.argmax(values))
    return Randomization(cands[best], float(values[best]), best - 1, values)


def closed_form_td(v_data: float, scenario: LinkScenario) -> tuple[float, bool]:
    """Minimiser of exp(-c t) + rho t over t >= 0, with c = v B / (S l).

    Returns ``(t_d, at_boundary)``; the boundary flag is set when
    rho >= c, where the objective is non-decreasing and t_d = 0.
    """
    c = propagation_exponent(v_data, scenario)
    rho = scenario.delay_weight
    if c <= 0:
        return 0.0, True
    ratio = rho / c
    if ratio >= 1.0:
        return 0.0, True
    return -math.log(ratio) / c, False


def regret(v_data: float, t_d: float, scenario: LinkScenario) -> float:
    """exp(-a t_b) + exp(-c t_d) + rho t_d."""
    a = queueing_exponent(v_data, scenario)
    c = propagation_exponent(v_data, scenario)
    return (math.exp(-a * scenario.wait_budget) + math.exp(-c * t_d)
            + scenario.delay_weight * t_d)


# traces --------------------------------------------------------------------------

@dataclass
class TraceRow:
    iteration: int
    rate: float
    proposed_rate: float
    t_d: float
    td_boundary: bool
    T: float
    regret: float
    proposed_regret: float
    accepted: str
    h_drift: float
    wall_time: float


@dataclass
class BcdTrace:
    algorithm: str
    initial_rate: float
    initial_td: float
    initial_regret: float
    rows: list = field(default_factory=list)

    COLUMNS = ("iteration", "rate", "proposed_rate", "t_d", "td_boundary", "T",
               "regret", "proposed_regret", "accepted")

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def rates(self) -> np.ndarray:
        return self.column("rate")

    @property
    def regrets(self) -> np.ndarray:
        return self.column("regret")

    def table(self) -> list:
        """Rows (without wall time) suitable for a delimiter-separated file."""
        out = []
        for r in self.rows:
            d = asdict(r)
            out.append([d[c] for c in self.COLUMNS])
        return out


# estimators -------------------------------------------------------------------------

def check_channel(state, scenario: LinkScenario) -> ChannelState:
    """Validate that ``state`` is a channel realisation matching ``scenario``."""
    if not isinstance(state, ChannelState):
        raise TypeError(f"expected a ChannelState, got {type(state).__name__}")
    expect = {
        "layers_tx": scenario.layers_tx,
        "layers_rx": scenario.layers_rx,
        "num_streams": scenario.num_streams,
    }
    for name, value in expect.items():
        if getattr(state, name) != value:
            raise ValueError(f"channel {name}={getattr(state, name)} but scenario has {value}")
    if state.G.shape != (scenario.atoms_rx, scenario.atoms_tx):
        raise ValueError(f"fading matrix shape {state.G.shape} does not match the scenario")
    for name in ("G", "U_out"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise ValueError(f"{name} has non-finite entries")
    return state


class _PhaseOptimizer(BaseEstimator):
    algorithm = ""

    def _scenario(self) -> LinkScenario:
        scenario = self.scenario if self.scenario is not None else default_scenario()
        problems = validate(scenario)
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))
        return scenario

    def _layers(self, scenario):
        tx = [("tx", p) for p in range(1, scenario.layers_tx + 1)]
        rx = [("rx", p) for p in range(1, scenario.layers_rx + 1)]
        if self.sweep_order == "tx-rx":
            return tx + rx
        if self.sweep_order == "rx-tx":
            return rx + tx
        raise ValueError(f"sweep_order must be one of {SWEEP_ORDERS}")

    def _start(self, X, init_phases, rng):
        scenario = self._scenario()
        state = check_channel(X, scenario)
        phases = init_phases if init_phases is not None else PhaseConfig.random(scenario, rng)
        return scenario, state, phases

    def _finish_iteration(self, trace, scenario, it, rate, proposed, flags, phases, state,
                          tracked_H, t0):
        t_d, boundary = closed_form_td(rate, scenario)
        p_td, _ = closed_form_td(proposed, scenario)
        H = assemble_H(phases, state)
        trace.rows.append(TraceRow(
            iteration=it, rate=rate, proposed_rate=proposed, t_d=t_d, td_boundary=boundary,
            T=self.d2_ + scenario.wait_budget + t_d, regret=regret(rate, t_d, scenario),
            proposed_regret=regret(proposed, p_td, scenario), accepted="".join(flags),
            h_drift=_rel_err(tracked_H, H), wall_time=time.perf_counter() - t0,
        ))
        return t_d

    def _set_result(self, scenario, phases, trace, state):
        self.phases_ = phases
        self.trace_ = trace
        self.rate_ = trace.rows[-1].rate if trace.rows else trace.initial_rate
        self.t_d_ = trace.rows[-1].t_d if trace.rows else trace.initial_td
        self.n_iter_ = len(trace)
        self.scenario_ = scenario
        return self

    def transform(self, X):
        check_is_fitted(self, "phases_")
        return assemble_H(self.phases_, check_channel(X, self.scenario_))

    def score(self, X, y=None):
        return rate_from_scale(self.transform(X), snr_scale(self.scenario_))

    def regret(self) -> float:
        check_is_fitted(self, "phases_")
        return regret(self.rate_, self.t_d_, self.scenario_)


class BCDPhaseOptimizer(_PhaseOptimizer):
    """Block coordinate descent with a semidefinite-relaxation layer update.

    Each iteration sweeps every layer: factorise H around the layer, lift
    to the unit-diagonal SDP, solve it, draw ``n_draws`` Gaussian
    candidates and keep the one with the highest rate. A layer update is
    accepted only if the rate does not drop. The propagation delay is
    then set in closed form.

    Parameters
    ----------
    scenario : LinkScenario, optional
    max_iter : int
        Number of BCD sweeps.
    n_draws : int
        Gaussian randomisation draws per layer solve.
    select : {"quadratic", "rate"}
        Criterion used to pick among randomisation candidates: the relaxed
        objective ||H||_F^2 (default) or the achievable rate.
    """

    algorithm = "BCD"

    def __init__(self, scenario=None, max_iter=20, n_draws=200, sweep_order="tx-rx",
                 select="quadratic", sdp_tol=1e-4, sdp_max_iter=5000, init_td=0.6,
                 random_state=None):
        self.scenario = scenario
        self.max_iter = max_iter
        self.n_draws = n_draws
        self.sweep_order = sweep_order
        self.select = select
        self.sdp_tol = sdp_tol
        self.sdp_max_iter = sdp_max_iter
        self.init_td = init_td
        self.random_state = random_state

    def fit(self, X, y=None, init_phases=None):
        rng = np.random.default_rng(self.random_state)
        scenario, state, phases = self._start(X, init_phases, rng)
        self.d2_ = transmission_delay_D2(scenario)
        scale = snr_scale(scenario)
        H = assemble_H(phases, state)
        rate = rate_from_scale(H, scale)
        trace = BcdTrace(self.algorithm, rate, self.init_td, regret(rate, self.init_td, scenario))
        if self.select not in ("rate", "quadratic"):
            raise ValueError("select must be 'rate' or 'quadratic'")
        scorer = (lambda Hs: batch_rate(Hs, scale)) if self.select == "rate" else None
        self.layer_status_ = []
        t0 = time.perf_counter()
        for it in range(1, self.max_iter + 1):
            flags, proposals = [], []
            for side, p in self._layers(scenario):
                sub = factorize_layer(p, side, phases, state)
                problem = sdp.SdpProblem(lift_costs(sub))
                sol = sdp.solve(problem, tol=self.sdp_tol, max_iter=self.sdp_max_iter, rng=rng)
                self.layer_status_.append((it, side, p, sol.status))
                if sol.status != "optimal":
                    flags.append("s")
                    continue
                pick = gaussian_randomize(sol, sub, self.n_draws, rng, score=scorer)
                cand_rate = rate_from_scale(sub.channel(pick.v), scale)
                proposals.append(cand_rate)
                if cand_rate >= rate:
                    phases = phases.with_layer(side, p, np.angle(pick.v))
                    H = sub.channel(pick.v)
                    rate = cand_rate
                    flags.append("1")
                else:
                    flags.append("0")
            proposed = float(np.mean(proposals)) if proposals else rate
            self._finish_iteration(trace, scenario, it, rate, proposed, flags, phases, state, H, t0)
        return self._set_result(scenario, phases, trace, state)


class AOPhaseOptimizer(_PhaseOptimizer):
    """Cyclic per-atom phase search on a ``grid_size``-point grid.

    For every layer and every atom, the phase is set to the grid value
    (or the incumbent) giving the highest rate with everything else fixed.
    """

    algorithm = "AO"

    def __init__(self, scenario=None, max_iter=20, grid_size=16, sweep_order="tx-rx",
                 init_td=0.6, random_state=None):
        self.scenario = scenario
        self.max_iter = max_iter
        self.grid_size = grid_size
        self.sweep_order = sweep_order
        self.init_td = init_td
        self.random_state = random_state

    def fit(self, X, y=None, init_phases=None):
        rng = np.random.default_rng(self.random_state)
        scenario, state, phases = self._start(X, init_phases, rng)
        self.d2_ = transmission_delay_D2(scenario)
        scale = snr_scale(scenario)
        grid = np.exp(1j * TWO_PI * np.arange(1, self.grid_size + 1) / self.grid_size)
        H = assemble_H(phases, state)
        rate = rate_from_scale(H, scale)
        trace = BcdTrace(self.algorithm, rate, self.init_td, regret(rate, self.init_td, scenario))
        t0 = time.perf_counter()
        for it in range(1, self.max_iter + 1):
            flags = []
            for side, p in self._layers(scenario):
                sub = factorize_layer(p, side, phases, state)
                v = sub.current.copy()
                H = sub.channel(v)
                changed = False
                for a in range(v.shape[0]):
                    outer = np.outer(sub.left[:, a], sub.right[a])
                    cands = np.concatenate(([v[a]], grid))
                    Hs = H[None] + (cands - v[a])[:, None, None] * outer[None]
                    best = int(np.argmax(batch_rate(Hs, scale)))
                    if best:
                        H = Hs[best]
                        v[a] = cands[best]
                        changed = True
                flags.append("1" if changed else "0")
                phases = phases.with_layer(side, p, np.angle(v))
                H = sub.channel(v)
            rate = rate_from_scale(H, scale)
            self._finish_iteration(trace, scenario, it, rate, rate, flags, phases, state, H, t0)
        return self._set_result(scenario, phases, trace, state)


# functional entry points ---------------------------------------------------------

def bcd_optimize(scenario: LinkScenario, max_iterations: int = 20, rng=None, channel=None,
                 init_phases=None, **kwargs):
    """Draw a channel (unless given) and run BCD; returns ``(trace, phases)``."""
    seed = scenario.rng_seed if rng is None else rng
    rng = np.random.default_rng(seed)
    state = channel if channel is not None else build_channel(scenario, rng)
    est = BCDPhaseOptimizer(scenario=scenario, max_iter=max_iterations, random_state=rng, **kwargs)
    est.fit(state, init_phases=init_phases)
    return est.trace_, est.phases_


def ao_baseline(scenario: LinkScenario, max_iterations: int = 20, rng=None, channel=None,
                init_phases=None, **kwargs):
    seed = scenario.rng_seed if rng is None else rng
    rng = np.random.default_rng(seed)
    state = channel if channel is not None else build_channel(scenario, rng)
    est = AOPhaseOptimizer(scenario=scenario, max_iter=max_iterations, random_state=rng, **kwargs)
    est.fit(state, init_phases=init_phases)
    return est.trace_, est.phases_
