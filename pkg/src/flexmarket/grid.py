"""DC network model for locational flexibility trading.

Line flows are linear in the nodal injections, so everything the
clearing engine needs from the grid reduces to one sensitivity matrix:
the power transfer distribution factors (PTDFs). Each entry gives the
change in a line flow per kW injected at a bus and withdrawn at the
slack. From it we derive current flows, per-line headroom, the
sensitivity of every line to a bus-to-bus exchange, and the largest
exchange quantity that keeps all lines within their limits.

All functions here are pure; :class:`PtdfMatrix` is write-locked after
construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable

import numpy as np

from .errors import InfeasibleBaselineError, NetworkError, UnknownBusError

UP = "up"
DOWN = "down"
DIRECTIONS = (UP, DOWN)

#: Sensitivities smaller than this are treated as exactly zero.
ALPHA_TOL = 1e-9
#: Quantities and flow margins below this many kW are treated as zero.
QUANTITY_TOL = 1e-6


@dataclass(frozen=True)
class Line:
    """One branch of the distribution grid.

    Positive flow runs from ``from_bus`` toward ``to_bus``. ``reactance``
    is per-unit and must be positive; ``limit_kw`` is the thermal limit
    in kW, applied symmetrically to both flow directions.
    """

    from_bus: Hashable
    to_bus: Hashable
    reactance: float
    limit_kw: float

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} is a self-loop")
        if not self.reactance > 0:
            raise NetworkError(
                f"line {self.from_bus}-{self.to_bus}: reactance must be > 0"
            )
        if not self.limit_kw > 0:
            raise NetworkError(
                f"line {self.from_bus}-{self.to_bus}: limit_kw must be > 0"
            )

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


@dataclass
class Network:
    """Buses, lines and the slack bus of a radial or meshed grid."""

    buses: list
    lines: list
    slack_bus: Hashable
    line_labels: tuple = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(set(self.buses)) != len(self.buses):
            raise NetworkError("duplicate bus ids")
        if not self.lines:
            raise NetworkError("a network needs at least one line")
        bus_set = set(self.buses)
        if self.slack_bus not in bus_set:
            raise NetworkError(f"slack bus {self.slack_bus!r} is not a network bus")
        for line in self.lines:
            if line.from_bus not in bus_set or line.to_bus not in bus_set:
                raise NetworkError(f"line {line.label} references an unknown bus")
        self._check_connected()
        labels = []
        seen: dict = {}
        for line in self.lines:
            base = line.label
            seen[base] = seen.get(base, 0) + 1
            labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
        self.line_labels = tuple(labels)

    def _check_connected(self) -> None:
        adjacency: dict = {b: [] for b in self.buses}
        for line in self.lines:
            adjacency[line.from_bus].append(line.to_bus)
            adjacency[line.to_bus].append(line.from_bus)
        reached = {self.slack_bus}
        frontier = [self.slack_bus]
        while frontier:
            bus = frontier.pop()
            for other in adjacency[bus]:
                if other not in reached:
                    reached.add(other)
                    frontier.append(other)
        missing = [b for b in self.buses if b not in reached]
        if missing:
            raise NetworkError(f"network is disconnected; unreachable buses: {missing}")

    def limit_vector(self) -> np.ndarray:
        return np.array([line.limit_kw for line in self.lines], dtype=float)


@dataclass
class DispatchState:
    """Net injection per bus in kW. Generation is positive, load negative."""

    injection_kw: dict

    def copy(self) -> "DispatchState":
        return DispatchState(dict(self.injection_kw))

    def vector(self, buses: Iterable) -> np.ndarray:
        try:
            return np.array([self.injection_kw[b] for b in buses], dtype=float)
        except KeyError as exc:
            raise UnknownBusError(f"dispatch has no entry for bus {exc.args[0]!r}") from None

    def apply_exchange(self, inject_bus, withdraw_bus, quantity_kw: float) -> None:
        """Add ``quantity_kw`` at the injection bus and remove it at the withdrawal bus."""
        try:
            self.injection_kw[inject_bus] += quantity_kw
            self.injection_kw[withdraw_bus] -= quantity_kw
        except KeyError as exc:
            raise UnknownBusError(f"dispatch has no entry for bus {exc.args[0]!r}") from None


@dataclass(frozen=True)
class PtdfMatrix:
    """Line-by-bus sensitivity matrix for a fixed slack bus.

    ``entry(line, bus)`` is the flow change on the line, in kW per kW
    injected at the bus and withdrawn at the slack. The slack column is
    identically zero. For a purely radial network every entry is in
    {-1, 0, +1}.
    """

    matrix: np.ndarray
    buses: tuple
    line_labels: tuple
    slack_bus: Hashable

    def bus_position(self, bus) -> int:
        try:
            return self.buses.index(bus)
        except ValueError:
            raise UnknownBusError(f"unknown bus {bus!r}") from None

    def column(self, bus) -> np.ndarray:
        return self.matrix[:, self.bus_position(bus)]

    def entry(self, line, bus) -> float:
        if not isinstance(line, (int, np.integer)):
            try:
                line = self.line_labels.index(line)
            except ValueError:
                raise NetworkError(f"unknown line {line!r}") from None
        return float(self.matrix[line, self.bus_position(bus)])


@dataclass(frozen=True)
class FlowHeadroom:
    """Admissible flow change on a line, in both directions."""

    flow_kw: float
    up_margin_kw: float
    down_margin_kw: float


@dataclass(frozen=True)
class ExchangeSensitivity:
    """Per-line flow change per kW moved from ``inject_bus`` to ``withdraw_bus``."""

    inject_bus: Hashable
    withdraw_bus: Hashable
    alpha: np.ndarray


def build_ptdf(network: Network) -> PtdfMatrix:
    """Build the PTDF matrix of a network.

    The reduced nodal susceptance matrix (slack row and column removed)
    is solved against the branch susceptance-incidence matrix. The sign
    convention follows the line orientation: a positive entry means an
    injection at that bus pushes flow from ``from_bus`` toward ``to_bus``.
    """
    buses = list(network.buses)
    n, n_lines = len(buses), len(network.lines)
    pos = {b: i for i, b in enumerate(buses)}

    incidence = np.zeros((n_lines, n))
    weights = np.empty(n_lines)
    for row, line in enumerate(network.lines):
        incidence[row, pos[line.from_bus]] = 1.0
        incidence[row, pos[line.to_bus]] = -1.0
        weights[row] = 1.0 / line.reactance

    branch_susceptance = weights[:, None] * incidence
    nodal_susceptance = incidence.T @ branch_susceptance
    keep = [i for i in range(n) if buses[i] != network.slack_bus]
    reduced = nodal_susceptance[np.ix_(keep, keep)]
    try:
        # PTDF_red = Bf_red @ inv(B_red); solve on the transpose instead of inverting.
        ptdf_reduced = np.linalg.solve(reduced.T, branch_susceptance[:, keep].T).T
    except np.linalg.LinAlgError:
        raise NetworkError("singular reduced susceptance matrix") from None

    matrix = np.zeros((n_lines, n))
    matrix[:, keep] = ptdf_reduced
    matrix.setflags(write=False)
    return PtdfMatrix(
        matrix=matrix,
        buses=tuple(buses),
        line_labels=network.line_labels,
        slack_bus=network.slack_bus,
    )


def line_flows(ptdf: PtdfMatrix, dispatch: DispatchState) -> np.ndarray:
    """Flows on every line, in kW, for the given dispatch."""
    return ptdf.matrix @ dispatch.vector(ptdf.buses)


def headroom(line: Line, flow_kw: float) -> FlowHeadroom:
    """Maximum admissible flow change on a line, in both directions.

    A line already above its limit yields a negative up margin (or a
    positive down margin); callers must read that as zero tradable
    quantity in the violating direction.
    """
    return FlowHeadroom(
        flow_kw=flow_kw,
        up_margin_kw=line.limit_kw - flow_kw,
        down_margin_kw=-line.limit_kw - flow_kw,
    )


def exchange_buses(request_bus, offer_bus, direction: str):
    """Map a matched pair onto (injection bus, withdrawal bus).

    Upward flexibility is delivered by the offerer raising net injection,
    so the offer bus injects and the request bus withdraws; downward
    flexibility mirrors it.
    """
    if direction == UP:
        return offer_bus, request_bus
    if direction == DOWN:
        return request_bus, offer_bus
    raise ValueError(f"unknown direction {direction!r}")


def exchange_sensitivity(ptdf: PtdfMatrix, inject_bus, withdraw_bus) -> ExchangeSensitivity:
    """Per-line sensitivity of an injection at one bus withdrawn at another.

    Depends only on topology and reactances, never on the dispatch. The
    two buses may coincide, in which case the sensitivity is zero.
    """
    alpha = ptdf.column(inject_bus) - ptdf.column(withdraw_bus)
    return ExchangeSensitivity(inject_bus=inject_bus, withdraw_bus=withdraw_bus, alpha=alpha)


def quantity_caps(
    alpha: np.ndarray,
    flows: np.ndarray,
    limits: np.ndarray,
    alpha_tol: float = ALPHA_TOL,
) -> np.ndarray:
    """Per-line cap on an exchange quantity, given current flows.

    For a line whose flow rises with the exchange the cap is the
    remaining headroom toward the limit; for a line whose flow falls it
    is the headroom toward the negative limit. Margins already used up
    clamp to zero, and lines the exchange does not touch impose no cap.
    ``flows`` may be a single vector or a stack of vectors (one row per
    dispatch variant); the result has the same shape.
    """
    flows = np.asarray(flows, dtype=float)
    up_margin = np.maximum(limits - flows, 0.0)
    down_margin = np.minimum(-limits - flows, 0.0)
    positive = alpha > alpha_tol
    negative = alpha < -alpha_tol
    safe_alpha = np.where(positive | negative, alpha, 1.0)
    return np.where(
        positive,
        up_margin / safe_alpha,
        np.where(negative, down_margin / safe_alpha, np.inf),
    )


def max_tradable_quantity(
    network: Network,
    ptdf: PtdfMatrix,
    dispatch: DispatchState,
    request_bus,
    offer_bus,
    direction: str,
    quantity_kw: float,
    tolerance_kw: float = QUANTITY_TOL,
) -> float:
    """Largest quantity of the requested exchange that no line refuses.

    Any activation between zero and the returned value leaves every line
    within its limit: per line the flow moves linearly with the quantity,
    so the extreme flow occurs at full activation and partial activations
    are covered automatically. Results below ``tolerance_kw`` collapse
    to zero.
    """
    if not quantity_kw > 0:
        raise ValueError("quantity_kw must be positive")
    inject_bus, withdraw_bus = exchange_buses(request_bus, offer_bus, direction)
    alpha = exchange_sensitivity(ptdf, inject_bus, withdraw_bus).alpha
    caps = quantity_caps(alpha, line_flows(ptdf, dispatch), network.limit_vector())
    quantity = min(float(quantity_kw), float(caps.min()))
    return quantity if quantity >= tolerance_kw else 0.0


def check_baseline(
    network: Network,
    ptdf: PtdfMatrix,
    dispatch: DispatchState,
    tolerance_kw: float = QUANTITY_TOL,
) -> np.ndarray:
    """Validate that a dispatch violates no line limit; return its flows."""
    flows = line_flows(ptdf, dispatch)
    overload = np.abs(flows) - network.limit_vector()
    worst = int(np.argmax(overload))
    if overload[worst] > tolerance_kw:
        raise InfeasibleBaselineError(
            f"baseline infeasible, line {network.line_labels[worst]}: "
            f"flow {flows[worst]:g} kW exceeds limit {network.lines[worst].limit_kw:g} kW"
        )
    return flows
