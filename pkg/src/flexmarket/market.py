"""Continuous clearing engine for locational flexibility trading.

Offers and requests arrive one at a time and rest in an order book
until they cross. An incoming bid is compared against resting
counterparties in the same direction, first come first served;
price-compatible pairs trade at the earlier bid's price (pay as bid),
for the largest quantity that keeps every line within its limit under
the configured combination policy. A match with an unconditional
request shifts the baseline dispatch immediately and triggers a
re-evaluation of the resting offers, which may unlock bids that were
previously blocked by congestion.

The book is a single-writer state machine: submissions, matching and
baseline updates are strictly serialized. Only the evaluation of a
combination set is side-effect free and may be fanned out across
threads; its result is reduced with an elementwise minimum and is
therefore identical to sequential evaluation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Hashable, Iterable, Optional

import numpy as np

from .errors import CombinationLimitError, MarketError, UnknownBusError
from .grid import (
    ALPHA_TOL,
    DOWN,
    QUANTITY_TOL,
    UP,
    DispatchState,
    Network,
    build_ptdf,
    check_baseline,
    exchange_buses,
    quantity_caps,
)

logger = logging.getLogger(__name__)

OFFER = "offer"
REQUEST = "request"
SIDES = (OFFER, REQUEST)

CONDITIONAL = "conditional"
UNCONDITIONAL = "unconditional"

INDIVIDUAL = "individual"
CUMULATIVE = "cumulative"
INDIVIDUAL_AND_CUMULATIVE = "individual_and_cumulative"
ALL_COMBINATIONS = "all_combinations"
SCENARIOS = "scenarios"
POLICY_VARIANTS = (
    INDIVIDUAL,
    CUMULATIVE,
    INDIVIDUAL_AND_CUMULATIVE,
    ALL_COMBINATIONS,
    SCENARIOS,
)

ORDER_FIFO = "fifo"
ORDER_BEST_PRICE = "best_price"

OUTCOME_MATCHED = "matched"
OUTCOME_PARTIAL = "partial(congestion)"
OUTCOME_REJECTED_CONGESTION = "rejected(congestion)"
OUTCOME_REJECTED_PRICE = "rejected(price)"

# Combination indicators are expanded in chunks of this many rows to
# bound memory when the policy enumerates every subset.
_CHUNK_ROWS = 1 << 13


@dataclass(frozen=True)
class FeasibilityPolicy:
    """Which activation combinations must be line-feasible before a match.

    ``individual`` checks the candidate alone on the baseline;
    ``cumulative`` checks it on top of all accepted conditional matches;
    ``individual_and_cumulative`` requires both; ``all_combinations``
    checks every subset of accepted conditional matches; ``scenarios``
    checks the supplied activation subsets (named by match id) plus,
    always, the candidate alone.
    """

    variant: str
    scenarios: tuple = ()

    def __post_init__(self) -> None:
        if self.variant not in POLICY_VARIANTS:
            raise MarketError(f"unknown policy variant {self.variant!r}")
        if self.variant == SCENARIOS:
            if not self.scenarios:
                raise MarketError("scenarios policy requires a non-empty scenario list")
            object.__setattr__(
                self, "scenarios", tuple(frozenset(s) for s in self.scenarios)
            )


@dataclass
class Bid:
    """A flexibility offer or request resting in (or entering) the book.

    ``quantity_kw`` is the remaining unmatched quantity and shrinks with
    partial fills; a bid with nothing left leaves the book. Only
    requests carry a conditionality. The sequence number is the arrival
    index assigned on submission and is the sole tie-breaker.
    """

    id: str
    side: str
    direction: str
    bus: Hashable
    quantity_kw: float
    price_eur_per_kw: float
    conditionality: Optional[str] = None
    sequence: int = -1
    original_quantity_kw: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise MarketError("bid id must be a non-empty string")
        if self.side not in SIDES:
            raise MarketError(f"bid {self.id}: unknown side {self.side!r}")
        if self.direction not in (UP, DOWN):
            raise MarketError(f"bid {self.id}: unknown direction {self.direction!r}")
        if not self.quantity_kw > 0:
            raise MarketError(f"bid {self.id}: quantity_kw must be > 0")
        if self.price_eur_per_kw < 0:
            raise MarketError(f"bid {self.id}: price_eur_per_kw must be >= 0")
        if self.side == REQUEST:
            if self.conditionality not in (CONDITIONAL, UNCONDITIONAL):
                raise MarketError(
                    f"request {self.id} must be 'conditional' or 'unconditional'"
                )
        elif self.conditionality is not None:
            raise MarketError(f"offer {self.id} must not carry a conditionality")
        if self.original_quantity_kw is None:
            self.original_quantity_kw = self.quantity_kw


@dataclass(frozen=True)
class MatchRecord:
    """A cleared (offer, request) pair; the unit of combination checking.

    The injection and withdrawal buses already encode the direction:
    for upward flexibility the offer bus injects, for downward the
    request bus does. Conditionality is inherited from the request.
    """

    match_id: str
    offer_id: str
    request_id: str
    inject_bus: Hashable
    withdraw_bus: Hashable
    quantity_kw: float
    price_eur_per_kw: float
    conditionality: str
    round: int


@dataclass(frozen=True)
class TradeLogEntry:
    """One examined offer/request pairing and its outcome."""

    round: int
    offer_id: str
    request_id: str
    quantity_kw: float
    price_eur_per_kw: float
    outcome: str
    binding_lines: tuple = ()


def price_match(first_arrived: Bid, second_arrived: Bid) -> float:
    """Pay-as-bid trade price: the earlier of the two bids sets it."""
    by_side = {first_arrived.side: first_arrived, second_arrived.side: second_arrived}
    if set(by_side) != {OFFER, REQUEST}:
        raise MarketError("price_match needs one offer and one request")
    if by_side[OFFER].price_eur_per_kw > by_side[REQUEST].price_eur_per_kw:
        raise MarketError(
            f"incompatible prices: offer {by_side[OFFER].price_eur_per_kw} > "
            f"request {by_side[REQUEST].price_eur_per_kw}"
        )
    return first_arrived.price_eur_per_kw


class OrderBook:
    """Order book plus clearing state for one network and one policy.

    The baseline dispatch is mutated only by matches with unconditional
    requests and stays line-feasible at all times; accepted conditional
    matches are kept aside and enter the combination sets of later
    network checks.
    """

    def __init__(
        self,
        network: Network,
        baseline: DispatchState,
        policy: FeasibilityPolicy,
        *,
        max_combinations: int = 20,
        tolerance_kw: float = QUANTITY_TOL,
        order: str = ORDER_FIFO,
        parallel: bool = False,
    ):
        if max_combinations < 1:
            raise MarketError("max_combinations must be >= 1")
        if not tolerance_kw > 0:
            raise MarketError("tolerance_kw must be > 0")
        if order not in (ORDER_FIFO, ORDER_BEST_PRICE):
            raise MarketError(f"unknown counterparty order {order!r}")
        unknown = set(baseline.injection_kw) - set(network.buses)
        if unknown:
            raise UnknownBusError(f"baseline names unknown buses: {sorted(map(str, unknown))}")

        self.network = network
        self.policy = policy
        self.max_combinations = max_combinations
        self.tolerance_kw = tolerance_kw
        self.order = order
        self.parallel = parallel

        self.ptdf = build_ptdf(network)
        self._limits = network.limit_vector()
        self.baseline = baseline.copy()
        self._flows = check_baseline(network, self.ptdf, self.baseline, tolerance_kw)

        self.requests: list = []
        self.offers: list = []
        self.accepted: list = []  # conditional MatchRecords, acceptance order
        self._deltas: list = []  # per accepted match: line-flow change at full activation
        self.trade_log: list = []
        self.round = 0
        self._sequence = 0
        self._match_counter = 0
        self._seen_ids: set = set()

    # ------------------------------------------------------------------
    # public operations

    @property
    def flows(self) -> np.ndarray:
        """Line flows of the current baseline dispatch."""
        return self._flows.copy()

    @property
    def match_count(self) -> int:
        """Total matches so far, unconditional ones included."""
        return self._match_counter

    def submit_bid(self, bid: Bid) -> list:
        """Run one clearing round for an incoming bid.

        Returns every match the submission produced, including matches
        found while re-evaluating the book after an unconditional match
        shifted the baseline. Whatever quantity remains unmatched rests
        in the book.
        """
        self._validate_bid(bid)
        self._sequence = bid.sequence = self._next_sequence(bid)
        self._seen_ids.add(bid.id)
        self.round += 1
        (self.offers if bid.side == OFFER else self.requests).append(bid)
        logger.info("round %d: %s %s submitted", self.round, bid.side, bid.id)

        matches = self._try_match(bid)
        if any(rec.conditionality == UNCONDITIONAL for rec in matches):
            matches += self.reevaluate_book()
        return matches

    def reevaluate_book(self) -> list:
        """Re-try every resting offer until a pass finds no new unconditional match.

        Conditional matches found along the way are committed too, but do
        not trigger further passes by themselves.
        """
        new_matches: list = []
        while True:
            logger.info("round %d: re-evaluating %d resting offers", self.round, len(self.offers))
            pass_matches: list = []
            for offer in list(self.offers):
                if offer.quantity_kw > 0:
                    pass_matches += self._try_match(offer)
            new_matches += pass_matches
            if not any(rec.conditionality == UNCONDITIONAL for rec in pass_matches):
                return new_matches

    def check_combination_feasibility(
        self, request_bus, offer_bus, direction: str, quantity_kw: float
    ) -> float:
        """Maximum admissible quantity for a candidate pair under the policy.

        Evaluates the candidate exchange against every combination the
        policy mandates, each applied in full on top of the baseline,
        and returns the smallest allowance (zero when some mandated
        combination leaves no headroom).
        """
        inject_bus, withdraw_bus = exchange_buses(request_bus, offer_bus, direction)
        quantity, _ = self._evaluate_candidate(inject_bus, withdraw_bus, quantity_kw)
        return quantity

    def activation_snapshot(self, match_ids: Iterable) -> DispatchState:
        """Baseline plus full activation of the named accepted matches."""
        by_id = {rec.match_id: rec for rec in self.accepted}
        snapshot = self.baseline.copy()
        for match_id in match_ids:
            try:
                record = by_id[match_id]
            except KeyError:
                raise MarketError(f"unknown match id {match_id!r}") from None
            snapshot.apply_exchange(record.inject_bus, record.withdraw_bus, record.quantity_kw)
        return snapshot

    def cancel_bid(self, bid_id: str) -> Bid:
        """Remove the unmatched remainder of a live bid. Trades stand."""
        for pool in (self.requests, self.offers):
            for bid in pool:
                if bid.id == bid_id:
                    pool.remove(bid)
                    logger.info("cancelled %s (remainder %g kW)", bid_id, bid.quantity_kw)
                    return bid
        raise MarketError(f"no live bid with id {bid_id!r}")

    # ------------------------------------------------------------------
    # matching internals

    def _next_sequence(self, bid: Bid) -> int:
        if bid.sequence < 0:
            return self._sequence + 1
        if bid.sequence <= self._sequence:
            raise MarketError(
                f"bid {bid.id}: sequence {bid.sequence} is not after {self._sequence}"
            )
        return bid.sequence

    def _validate_bid(self, bid: Bid) -> None:
        if bid.id in self._seen_ids:
            raise MarketError(f"duplicate bid id {bid.id!r}")
        if bid.bus not in set(self.network.buses):
            raise UnknownBusError(f"bid {bid.id}: unknown bus {bid.bus!r}")

    def _counterparties(self, incoming: Bid) -> list:
        pool = self.requests if incoming.side == OFFER else self.offers
        candidates = [b for b in pool if b.direction == incoming.direction and b is not incoming]
        if self.order == ORDER_FIFO:
            candidates.sort(key=lambda b: b.sequence)
        elif incoming.side == OFFER:
            # Highest-paying request first for an incoming offer.
            candidates.sort(key=lambda b: (-b.price_eur_per_kw, b.sequence))
        else:
            candidates.sort(key=lambda b: (b.price_eur_per_kw, b.sequence))
        return candidates

    def _try_match(self, incoming: Bid) -> list:
        matches: list = []
        for other in self._counterparties(incoming):
            if incoming.quantity_kw <= 0:
                break
            if other.quantity_kw <= 0:
                continue
            offer, request = (incoming, other) if incoming.side == OFFER else (other, incoming)
            if offer.price_eur_per_kw > request.price_eur_per_kw:
                self._log(offer, request, 0.0, 0.0, OUTCOME_REJECTED_PRICE, ())
                continue
            earlier, later = sorted((offer, request), key=lambda b: b.sequence)
            price = price_match(earlier, later)
            quantity = min(offer.quantity_kw, request.quantity_kw)
            inject_bus, withdraw_bus = exchange_buses(request.bus, offer.bus, request.direction)
            admissible, binding = self._evaluate_candidate(inject_bus, withdraw_bus, quantity)
            if admissible <= 0:
                self._log(offer, request, 0.0, price, OUTCOME_REJECTED_CONGESTION, binding)
                continue

            self._match_counter += 1
            record = MatchRecord(
                match_id=f"m{self._match_counter}",
                offer_id=offer.id,
                request_id=request.id,
                inject_bus=inject_bus,
                withdraw_bus=withdraw_bus,
                quantity_kw=admissible,
                price_eur_per_kw=price,
                conditionality=request.conditionality,
                round=self.round,
            )
            full = admissible >= quantity - self.tolerance_kw
            self._fill(offer, admissible)
            self._fill(request, admissible)
            self._log(
                offer,
                request,
                admissible,
                price,
                OUTCOME_MATCHED if full else OUTCOME_PARTIAL,
                () if full else binding,
            )
            if record.conditionality == UNCONDITIONAL:
                self._apply_to_baseline(record)
            else:
                alpha = self.ptdf.column(inject_bus) - self.ptdf.column(withdraw_bus)
                self.accepted.append(record)
                self._deltas.append(alpha * admissible)
            matches.append(record)
        return matches

    def _fill(self, bid: Bid, quantity: float) -> None:
        bid.quantity_kw -= quantity
        if bid.quantity_kw <= self.tolerance_kw:
            bid.quantity_kw = 0.0
            pool = self.offers if bid.side == OFFER else self.requests
            if bid in pool:
                pool.remove(bid)

    def _apply_to_baseline(self, record: MatchRecord) -> None:
        self.baseline.apply_exchange(record.inject_bus, record.withdraw_bus, record.quantity_kw)
        # The match was capped to fit, so this must hold; a failure here is a bug.
        self._flows = check_baseline(self.network, self.ptdf, self.baseline, self.tolerance_kw)
        logger.info("baseline updated by unconditional match %s", record.match_id)

    def _log(self, offer, request, quantity, price, outcome, binding) -> None:
        self.trade_log.append(
            TradeLogEntry(
                round=self.round,
                offer_id=offer.id,
                request_id=request.id,
                quantity_kw=quantity,
                price_eur_per_kw=price,
                outcome=outcome,
                binding_lines=tuple(binding),
            )
        )
        logger.info(
            "round %d: %s/%s %s %g kW", self.round, offer.id, request.id, outcome, quantity
        )

    # ------------------------------------------------------------------
    # network checks

    def _indicator_chunks(self):
        """Yield 0/1 activation indicators, one row per mandated combination."""
        count = len(self.accepted)
        if count == 0 or self.policy.variant == INDIVIDUAL:
            yield np.zeros((1, count))
            return
        if self.policy.variant == CUMULATIVE:
            yield np.ones((1, count))
            return
        if self.policy.variant == INDIVIDUAL_AND_CUMULATIVE:
            yield np.vstack([np.zeros(count), np.ones(count)])
            return
        if self.policy.variant == SCENARIOS:
            ids = [rec.match_id for rec in self.accepted]
            rows = [np.zeros(count)]  # the candidate alone is always checked
            for scenario in self.policy.scenarios:
                rows.append(np.array([1.0 if mid in scenario else 0.0 for mid in ids]))
            yield np.vstack(rows)
            return
        if count > self.max_combinations:
            raise CombinationLimitError(
                f"{count} accepted conditional matches exceed the all_combinations "
                f"cap of {self.max_combinations}; raise the cap or switch to the "
                f"scenarios policy"
            )
        bits = np.arange(count)
        for lo in range(0, 1 << count, _CHUNK_ROWS):
            masks = np.arange(lo, min(lo + _CHUNK_ROWS, 1 << count), dtype=np.int64)
            yield ((masks[:, None] >> bits) & 1).astype(float)

    def _evaluate_candidate(self, inject_bus, withdraw_bus, quantity_kw: float):
        """Cap a candidate exchange against every mandated combination.

        Returns the admissible quantity and the labels of the lines whose
        cap bound it (empty when the full quantity goes through).
        """
        if not quantity_kw > 0:
            raise MarketError("candidate quantity must be positive")
        alpha = self.ptdf.column(inject_bus) - self.ptdf.column(withdraw_bus)
        if not np.any(np.abs(alpha) > ALPHA_TOL):
            return float(quantity_kw), ()

        n_lines = len(self.network.lines)
        deltas = (
            np.vstack(self._deltas) if self._deltas else np.zeros((0, n_lines))
        )

        def per_line_min(indicator: np.ndarray) -> np.ndarray:
            variant_flows = self._flows + indicator @ deltas
            return quantity_caps(alpha, variant_flows, self._limits).min(axis=0)

        chunks = list(self._indicator_chunks())
        if self.parallel and len(chunks) > 1:
            with ThreadPoolExecutor() as pool:
                minima = list(pool.map(per_line_min, chunks))
        else:
            minima = [per_line_min(chunk) for chunk in chunks]
        line_minima = np.minimum.reduce(minima)

        quantity = min(float(quantity_kw), float(line_minima.min()))
        if quantity < self.tolerance_kw:
            quantity = 0.0
        binding: tuple = ()
        if quantity < quantity_kw - self.tolerance_kw:
            bound = np.flatnonzero(line_minima <= quantity + self.tolerance_kw)
            binding = tuple(self.network.line_labels[i] for i in bound)
        return quantity, binding
