"""File formats, replay driver and reporting.

Networks and scenario lists are YAML; bid streams and trade logs are
one self-describing JSON record per line so arrival order is the file
order and logs diff deterministically. Units are kW and EUR/kW
throughout; reactances are per-unit. Bus ids are normalized to strings
on load.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

import yaml

from .errors import (
    InfeasibleBaselineError,
    InputError,
    MarketError,
    NetworkError,
)
from .grid import DispatchState, Line, Network, build_ptdf, check_baseline, exchange_buses
from .market import (
    ALL_COMBINATIONS,
    CUMULATIVE,
    INDIVIDUAL,
    INDIVIDUAL_AND_CUMULATIVE,
    ORDER_FIFO,
    OUTCOME_MATCHED,
    OUTCOME_PARTIAL,
    POLICY_VARIANTS,
    REQUEST,
    SCENARIOS,
    UNCONDITIONAL,
    Bid,
    FeasibilityPolicy,
    MatchRecord,
    OrderBook,
    TradeLogEntry,
)
from .oracle import exhaustive_subset_check

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_INFEASIBLE_BASELINE = 3

#: Short CLI spellings for the policy variants.
POLICY_ALIASES = {
    "individual": INDIVIDUAL,
    "cumulative": CUMULATIVE,
    "both": INDIVIDUAL_AND_CUMULATIVE,
    "all": ALL_COMBINATIONS,
    "scenarios": SCENARIOS,
}

_BID_FIELDS = {
    "id",
    "side",
    "direction",
    "bus",
    "quantity_kw",
    "price_eur_per_kw",
    "conditionality",
}


@dataclass
class MarketConfig:
    """Replay configuration; mirrors the CLI flags."""

    policy: str = ALL_COMBINATIONS
    scenarios_path: Optional[str] = None
    max_combinations: int = 20
    tolerance_kw: float = 1e-6
    order: str = ORDER_FIFO
    parallel: bool = False

    def __post_init__(self) -> None:
        self.policy = POLICY_ALIASES.get(self.policy, self.policy)
        if self.policy not in POLICY_VARIANTS:
            raise InputError(f"unknown policy {self.policy!r}")
        if self.max_combinations < 1:
            raise InputError("max_combinations must be >= 1")
        if not self.tolerance_kw > 0:
            raise InputError("tolerance must be > 0")


@dataclass
class ReplayResult:
    trades: list
    book: Optional[OrderBook]
    exit_code: int
    error: Optional[str] = None


def load_network(path, require_feasible: bool = True):
    """Read a network file; return the network and its slack-balanced baseline.

    The slack injection may be omitted and is then set to the negative
    sum of all other injections; if present it must already balance.
    Missing non-slack entries default to zero. Unless disabled, the
    baseline must violate no line limit.
    """
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise InputError(f"cannot read network file: {exc}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}: expected a mapping at the top level")
    for key in ("buses", "slack_bus", "lines"):
        if key not in data:
            raise InputError(f"{path}: missing key {key!r}")

    buses = [str(b) for b in data["buses"]]
    slack = str(data["slack_bus"])
    lines = []
    for i, raw in enumerate(data["lines"]):
        if not isinstance(raw, dict):
            raise InputError(f"{path}: line #{i + 1} is not a mapping")
        missing = {"from_bus", "to_bus", "reactance", "limit_kw"} - set(raw)
        if missing:
            raise InputError(f"{path}: line #{i + 1} missing {sorted(missing)}")
        lines.append(
            Line(
                from_bus=str(raw["from_bus"]),
                to_bus=str(raw["to_bus"]),
                reactance=float(raw["reactance"]),
                limit_kw=float(raw["limit_kw"]),
            )
        )
    network = Network(buses=buses, lines=lines, slack_bus=slack)

    raw_injections = data.get("injection_kw") or {}
    injections = {str(bus): float(value) for bus, value in raw_injections.items()}
    unknown = set(injections) - set(buses)
    if unknown:
        raise InputError(f"{path}: injection_kw names unknown buses {sorted(unknown)}")
    for bus in buses:
        if bus != slack:
            injections.setdefault(bus, 0.0)
    others = sum(value for bus, value in injections.items() if bus != slack)
    if slack in injections and abs(injections[slack] + others) > 1e-6:
        raise InputError(
            f"{path}: injections sum to {injections[slack] + others:g} kW, not zero"
        )
    injections[slack] = -others
    dispatch = DispatchState(injection_kw=injections)

    if require_feasible:
        check_baseline(network, build_ptdf(network), dispatch)
    return network, dispatch


def load_bids(path) -> list:
    """Read a bid stream: one JSON record per line, in arrival order."""
    try:
        with open(path) as handle:
            raw_lines = handle.readlines()
    except OSError as exc:
        raise InputError(f"cannot read bids file: {exc}") from None

    bids = []
    seen = set()
    for lineno, raw in enumerate(raw_lines, start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(record, dict):
            raise InputError(f"{path}:{lineno}: expected a JSON object")
        extra = set(record) - _BID_FIELDS
        if extra:
            raise InputError(f"{path}:{lineno}: unknown fields {sorted(extra)}")
        missing = {"id", "side", "direction", "bus", "quantity_kw", "price_eur_per_kw"} - set(record)
        if missing:
            raise InputError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        try:
            bid = Bid(
                id=str(record["id"]),
                side=record["side"],
                direction=record["direction"],
                bus=str(record["bus"]),
                quantity_kw=float(record["quantity_kw"]),
                price_eur_per_kw=float(record["price_eur_per_kw"]),
                conditionality=record.get("conditionality"),
                sequence=len(bids) + 1,
            )
        except MarketError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
        if bid.id in seen:
            raise InputError(f"{path}:{lineno}: duplicate bid id {bid.id!r}")
        seen.add(bid.id)
        bids.append(bid)
    return bids


def load_scenarios(path) -> tuple:
    """Read activation scenarios: a YAML list of lists of match ids."""
    try:
        with open(path) as handle:
            data = yaml.safe_load(handle)
    except OSError as exc:
        raise InputError(f"cannot read scenarios file: {exc}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(data, list) or not data:
        raise InputError(f"{path}: expected a non-empty list of scenarios")
    scenarios = []
    for i, entry in enumerate(data):
        if not isinstance(entry, list):
            raise InputError(f"{path}: scenario #{i + 1} is not a list")
        scenarios.append(frozenset(str(m) for m in entry))
    return tuple(scenarios)


def build_policy(config: MarketConfig) -> FeasibilityPolicy:
    if config.policy == SCENARIOS:
        if not config.scenarios_path:
            raise InputError("the scenarios policy needs a scenarios file")
        return FeasibilityPolicy(SCENARIOS, load_scenarios(config.scenarios_path))
    return FeasibilityPolicy(config.policy)


def new_book(network, baseline, config: MarketConfig) -> OrderBook:
    return OrderBook(
        network,
        baseline,
        build_policy(config),
        max_combinations=config.max_combinations,
        tolerance_kw=config.tolerance_kw,
        order=config.order,
        parallel=config.parallel,
    )


def run_replay(network_path, bids_path, config: MarketConfig, out_dir=None) -> ReplayResult:
    """Feed a bid file through the market in file order.

    On success, optionally writes ``trades.jsonl`` and ``book.json``
    under ``out_dir``. Load and validation problems are reported through
    the exit code instead of raising.
    """
    try:
        network, baseline = load_network(network_path)
        bids = load_bids(bids_path)
        book = new_book(network, baseline, config)
        for bid in bids:
            book.submit_bid(bid)
    except InfeasibleBaselineError as exc:
        return ReplayResult([], None, EXIT_INFEASIBLE_BASELINE, str(exc))
    except (InputError, NetworkError, MarketError) as exc:
        return ReplayResult([], None, EXIT_INPUT_ERROR, str(exc))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_trade_log(book.trade_log, os.path.join(out_dir, "trades.jsonl"))
        with open(os.path.join(out_dir, "book.json"), "w") as handle:
            handle.write(book_json(book))
    return ReplayResult(book.trade_log, book, EXIT_OK)


# ----------------------------------------------------------------------
# trade log serialization


def trade_log_lines(entries) -> list:
    lines = []
    for entry in entries:
        lines.append(
            json.dumps(
                {
                    "round": entry.round,
                    "offer_id": entry.offer_id,
                    "request_id": entry.request_id,
                    "quantity_kw": entry.quantity_kw,
                    "price_eur_per_kw": entry.price_eur_per_kw,
                    "outcome": entry.outcome,
                    "binding_lines": list(entry.binding_lines),
                },
                sort_keys=True,
            )
        )
    return lines


def write_trade_log(entries, path) -> None:
    with open(path, "w") as handle:
        for line in trade_log_lines(entries):
            handle.write(line + "\n")


def read_trade_log(path) -> list:
    entries = []
    try:
        with open(path) as handle:
            raw_lines = handle.readlines()
    except OSError as exc:
        raise InputError(f"cannot read trade log: {exc}") from None
    for lineno, raw in enumerate(raw_lines, start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
            entries.append(
                TradeLogEntry(
                    round=int(record["round"]),
                    offer_id=record["offer_id"],
                    request_id=record["request_id"],
                    quantity_kw=float(record["quantity_kw"]),
                    price_eur_per_kw=float(record["price_eur_per_kw"]),
                    outcome=record["outcome"],
                    binding_lines=tuple(record["binding_lines"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: bad trade log record: {exc}") from None
    return entries


# ----------------------------------------------------------------------
# order book dumps


def _bid_dict(bid: Bid) -> dict:
    record = {
        "id": bid.id,
        "side": bid.side,
        "direction": bid.direction,
        "bus": bid.bus,
        "quantity_kw": bid.quantity_kw,
        "original_quantity_kw": bid.original_quantity_kw,
        "price_eur_per_kw": bid.price_eur_per_kw,
        "sequence": bid.sequence,
    }
    if bid.side == REQUEST:
        record["conditionality"] = bid.conditionality
    return record


def _match_dict(record: MatchRecord) -> dict:
    return {
        "match_id": record.match_id,
        "offer_id": record.offer_id,
        "request_id": record.request_id,
        "inject_bus": record.inject_bus,
        "withdraw_bus": record.withdraw_bus,
        "quantity_kw": record.quantity_kw,
        "price_eur_per_kw": record.price_eur_per_kw,
        "conditionality": record.conditionality,
        "round": record.round,
    }


def dump_book(book: OrderBook) -> dict:
    return {
        "round": book.round,
        "sequence": book._sequence,
        "match_counter": book._match_counter,
        "injection_kw": {str(b): v for b, v in sorted(book.baseline.injection_kw.items())},
        "requests": [_bid_dict(b) for b in book.requests],
        "offers": [_bid_dict(b) for b in book.offers],
        "accepted_matches": [_match_dict(r) for r in book.accepted],
        "seen_ids": sorted(book._seen_ids),
    }


def book_json(book: OrderBook) -> str:
    return json.dumps(dump_book(book), sort_keys=True, indent=2) + "\n"


def load_book(path, network, config: MarketConfig) -> OrderBook:
    """Rebuild an order book from a dump; inverse of :func:`dump_book`."""
    try:
        with open(path) as handle:
            data = json.load(handle)
    except OSError as exc:
        raise InputError(f"cannot read book dump: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None

    baseline = DispatchState({str(b): float(v) for b, v in data["injection_kw"].items()})
    book = new_book(network, baseline, config)
    book.round = int(data["round"])
    book._sequence = int(data["sequence"])
    book._match_counter = int(data["match_counter"])
    book._seen_ids = set(data["seen_ids"])
    for pool, records in ((book.requests, data["requests"]), (book.offers, data["offers"])):
        for raw in records:
            pool.append(
                Bid(
                    id=raw["id"],
                    side=raw["side"],
                    direction=raw["direction"],
                    bus=raw["bus"],
                    quantity_kw=float(raw["quantity_kw"]),
                    price_eur_per_kw=float(raw["price_eur_per_kw"]),
                    conditionality=raw.get("conditionality"),
                    sequence=int(raw["sequence"]),
                    original_quantity_kw=float(raw["original_quantity_kw"]),
                )
            )
    for raw in data["accepted_matches"]:
        record = MatchRecord(
            match_id=raw["match_id"],
            offer_id=raw["offer_id"],
            request_id=raw["request_id"],
            inject_bus=raw["inject_bus"],
            withdraw_bus=raw["withdraw_bus"],
            quantity_kw=float(raw["quantity_kw"]),
            price_eur_per_kw=float(raw["price_eur_per_kw"]),
            conditionality=raw["conditionality"],
            round=int(raw["round"]),
        )
        book.accepted.append(record)
        alpha = book.ptdf.column(record.inject_bus) - book.ptdf.column(record.withdraw_bus)
        book._deltas.append(alpha * record.quantity_kw)
    return book


# ----------------------------------------------------------------------
# post-hoc audits


def audit_trade_log(network_path, bids_path, trades_path, tolerance_kw: float = 1e-6):
    """Exhaustively audit the cleared state a trade log describes.

    Rebuilds the final baseline by replaying the unconditional trades in
    log order, collects the conditional matches, and solves every
    activation subset with the independent oracle. Returns the list of
    violating subsets; empty means the procurement is activation-safe.
    """
    network, baseline = load_network(network_path)
    bids = {bid.id: bid for bid in load_bids(bids_path)}
    dispatch = baseline.copy()
    conditional = []
    for i, entry in enumerate(read_trade_log(trades_path)):
        if entry.outcome not in (OUTCOME_MATCHED, OUTCOME_PARTIAL):
            continue
        try:
            offer, request = bids[entry.offer_id], bids[entry.request_id]
        except KeyError as exc:
            raise InputError(f"trade log names unknown bid {exc.args[0]!r}") from None
        inject_bus, withdraw_bus = exchange_buses(request.bus, offer.bus, request.direction)
        if request.conditionality == UNCONDITIONAL:
            dispatch.apply_exchange(inject_bus, withdraw_bus, entry.quantity_kw)
        else:
            conditional.append(
                MatchRecord(
                    match_id=f"m{i + 1}",
                    offer_id=offer.id,
                    request_id=request.id,
                    inject_bus=inject_bus,
                    withdraw_bus=withdraw_bus,
                    quantity_kw=entry.quantity_kw,
                    price_eur_per_kw=entry.price_eur_per_kw,
                    conditionality=request.conditionality,
                    round=entry.round,
                )
            )
    return exhaustive_subset_check(network, dispatch, conditional, tolerance_kw)
