"""Discrete slot-based multi-agent market simulator.

One trading day: agents wake stochastically each one-second slot, emit at
most one limit order plus stale-order cancellations, and the book executes
the shuffled batch at slot end. Everything is deterministic for a fixed
seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import agents as ag
from .agents import AgentAccount, AgentProfile, BehaviorVector, MinuteHistory
from .lob import Book, LimitOrder, Side, TradeEvent

SLOTS_PER_MINUTE = 60
FUNDAMENTAL_INTERVAL_SLOTS = 600  # ten minutes

# Global accounting of simulator invocations (drives the efficiency
# comparison between one-shot and search-based calibration).
_SIM_CALLS = 0


def sim_call_count() -> int:
    return _SIM_CALLS


def reset_sim_calls():
    global _SIM_CALLS
    _SIM_CALLS = 0


@dataclass(frozen=True)
class SimConfig:
    slots_per_day: int = 14400
    n_agents: int = 500
    wake_prob: float = 0.01
    tick_size: float = 0.01
    lot_size: int = 1
    open_price: float = 100.0
    alpha_ref: float = 2.5e-5
    lambda_band: float = 0.05
    rng_seed: int = 0
    tag: str = "composite-fcn-v1"   # label for the agent-mix ruleset

    def __post_init__(self):
        if self.slots_per_day < 60:
            raise ValueError("slots_per_day must be >= 60")
        if not (0.0 < self.wake_prob <= 1.0):
            raise ValueError("wake_prob must be in (0, 1]")
        if self.open_price <= 0 or self.tick_size <= 0:
            raise ValueError("open_price and tick_size must be positive")

    @property
    def open_price_ticks(self) -> int:
        return max(1, round(self.open_price / self.tick_size))

    @property
    def minutes_per_day(self) -> int:
        return self.slots_per_day // SLOTS_PER_MINUTE

    @property
    def fundamental_len(self) -> int:
        return self.slots_per_day // FUNDAMENTAL_INTERVAL_SLOTS


@dataclass(frozen=True)
class FundamentalSeries:
    """Fundamental value on a ten-minute grid, piecewise constant between
    samples. Values are in currency units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or len(v) < 1 or np.any(v <= 0):
            raise ValueError("fundamental series must be a positive 1-d series")

    def at_slot(self, slot: int) -> float:
        k = min(slot // FUNDAMENTAL_INTERVAL_SLOTS, len(self.values) - 1)
        return float(self.values[k])


@dataclass
class Event:
    slot: int
    seq: int
    kind: str          # PLACE | CANCEL | TRADE
    order_id: int
    agent: int
    side: int          # Side value; -1 where not applicable
    price: int         # ticks; 0 for CANCEL
    size: int          # lots; 0 for CANCEL
    match_id: int      # taker order id for TRADE rows, else -1


@dataclass
class OrderStream:
    open_price: float
    tick_size: float
    lot_size: int
    slots_per_day: int
    seed: int
    events: list[Event] = field(default_factory=list)
    mid_slot: np.ndarray = field(default_factory=lambda: np.zeros(0))     # ticks
    mid_minute: np.ndarray = field(default_factory=lambda: np.zeros(0))   # ticks

    @property
    def open_price_ticks(self) -> int:
        return max(1, round(self.open_price / self.tick_size))

    def mid_minute_currency(self) -> np.ndarray:
        return self.mid_minute * self.tick_size


def fundamental_from_stream(stream: OrderStream) -> FundamentalSeries:
    """Sample the per-minute mid on a ten-minute grid (left boundaries)."""
    minutes = stream.mid_minute
    n = len(minutes) // 10
    if n < 1:
        raise ValueError("stream shorter than one fundamental sample interval")
    values = minutes[np.arange(n) * 10] * stream.tick_size
    return FundamentalSeries(values)


def settle(account: AgentAccount, trade: TradeEvent, side: Side, lot_size: int):
    """Apply one trade leg to an account; invariants are hard-asserted."""
    notional = trade.price * trade.size * lot_size
    if side is Side.BID:
        account.cash -= notional
        account.holdings += trade.size
    else:
        account.cash += notional
        account.holdings -= trade.size
    assert account.cash >= 0, "negative cash: affordability clamp failed upstream"
    assert account.holdings >= 0, "negative holdings: inventory clamp failed upstream"


class _AgentState:
    __slots__ = ("profile", "account", "orders")

    def __init__(self, profile: AgentProfile, account: AgentAccount):
        self.profile = profile
        self.account = account
        self.orders: dict[int, LimitOrder] = {}  # resting orders by id


def run_day(cfg: SimConfig, b: BehaviorVector, fund: FundamentalSeries,
            seed: int | None = None) -> OrderStream:
    """Simulate one trading day and record the full order stream."""
    global _SIM_CALLS
    _SIM_CALLS += 1
    if len(fund.values) != cfg.fundamental_len:
        raise ValueError(
            f"fundamental length {len(fund.values)} != expected {cfg.fundamental_len}")
    seed = cfg.rng_seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D]))

    profiles, accounts = ag.build_population(
        b, cfg.n_agents, cfg.alpha_ref, cfg.open_price_ticks, rng)
    states = [_AgentState(p, a) for p, a in zip(profiles, accounts)]

    book = Book(cfg.tick_size, cfg.lot_size, cfg.open_price_ticks)
    history = MinuteHistory()
    stream = OrderStream(cfg.open_price, cfg.tick_size, cfg.lot_size,
                         cfg.slots_per_day, seed)
    mid_slot = np.empty(cfg.slots_per_day)
    mid_minute: list[float] = []

    sigma_noise = 0.01 * cfg.open_price
    var_floor = 1e-8 * cfg.open_price ** 2
    var_cap = 1e-6 * cfg.open_price ** 2
    next_order_id = 0
    seq = 0

    wake = rng.random((cfg.slots_per_day, cfg.n_agents)) < cfg.wake_prob
    # flattened wake schedule: per-slot ascending agent ids, consumed by a
    # moving pointer (one nonzero pass instead of one per slot)
    wake_slots, wake_agents = (arr.tolist() for arr in np.nonzero(wake))
    n_wakes = len(wake_slots)
    ptr = 0

    mid_cache = book.mid_price()  # valid until the next book operation
    for slot in range(cfg.slots_per_day):
        if ptr < n_wakes and wake_slots[ptr] == slot:
            mid = mid_cache * cfg.tick_size
            fund_now = fund.at_slot(slot)
            batch: list[tuple[int, list[int], LimitOrder | None]] = []
            while ptr < n_wakes and wake_slots[ptr] == slot:
                a_idx = wake_agents[ptr]
                ptr += 1
                st = states[a_idx]
                cancels = _stale_orders(st, book, slot)
                intent = ag.make_order(
                    st.profile, st.account,
                    mid=mid, history=history, fundamental_now=fund_now,
                    sigma_noise=sigma_noise, var_floor=var_floor,
                    var_cap=var_cap, lambda_band=cfg.lambda_band, tick_size=cfg.tick_size,
                    lot_size=cfg.lot_size, rng=rng)
                order = None
                if intent is not None:
                    order = LimitOrder(next_order_id, a_idx, intent.side,
                                       intent.price, intent.size, slot)
                    next_order_id += 1
                batch.append((a_idx, cancels, order))
            touched = False
            for j in rng.permutation(len(batch)):
                a_idx, cancels, order = batch[j]
                st = states[a_idx]
                for oid in cancels:
                    seq = _apply_cancel(st, book, oid, slot, seq, stream, cfg.lot_size)
                    touched = True
                if order is not None:
                    seq = _apply_place(states, book, order, slot, seq, stream, cfg.lot_size)
                    touched = True
            if touched:
                mid_cache = book.mid_price()
        mid_slot[slot] = mid_cache
        if (slot + 1) % SLOTS_PER_MINUTE == 0:
            mid_minute.append(mid_cache)
            history.append(mid_cache * cfg.tick_size)

    stream.mid_slot = mid_slot
    stream.mid_minute = np.array(mid_minute)
    return stream


def _stale_orders(st: _AgentState, book: Book, slot: int) -> list[int]:
    stale = []
    dead = []
    for oid, order in st.orders.items():
        if book.order(oid) is None:
            dead.append(oid)
        elif slot - order.birth_slot > st.profile.tau_i:
            stale.append(oid)
    for oid in dead:
        del st.orders[oid]
    return stale


def _apply_cancel(st: _AgentState, book: Book, oid: int, slot: int, seq: int,
                  stream: OrderStream, lot_size: int) -> int:
    order = book.order(oid)
    if order is None:
        st.orders.pop(oid, None)
        return seq
    if book.cancel(oid):
        if order.side is Side.BID:
            st.account.reserved_cash -= order.price * order.size * lot_size
        else:
            st.account.reserved_lots -= order.size
        st.orders.pop(oid, None)
        stream.events.append(Event(slot, seq, "CANCEL", oid, order.agent,
                                   int(order.side), 0, 0, -1))
        seq += 1
    return seq


def _apply_place(states: list[_AgentState], book: Book, order: LimitOrder,
                 slot: int, seq: int, stream: OrderStream, lot_size: int) -> int:
    stream.events.append(Event(slot, seq, "PLACE", order.id, order.agent,
                               int(order.side), order.price, order.size, -1))
    seq += 1
    taker = states[order.agent]
    trades = book.place_limit(order, slot)
    for tr in trades:
        maker = states[tr.maker_agent]
        # maker leg releases its resting reservation at the trade price
        if order.side is Side.BID:
            settle(maker.account, tr, Side.ASK, lot_size)
            maker.account.reserved_lots -= tr.size
            settle(taker.account, tr, Side.BID, lot_size)
        else:
            settle(maker.account, tr, Side.BID, lot_size)
            maker.account.reserved_cash -= tr.price * tr.size * lot_size
            settle(taker.account, tr, Side.ASK, lot_size)
        if book.order(tr.maker) is None:
            maker.orders.pop(tr.maker, None)
        stream.events.append(Event(slot, seq, "TRADE", tr.maker, tr.maker_agent,
                                   int(order.side), tr.price, tr.size, tr.taker))
        seq += 1
    if order.size > 0:  # residue rests
        if order.side is Side.BID:
            taker.account.reserved_cash += order.price * order.size * lot_size
        else:
            taker.account.reserved_lots += order.size
        taker.orders[order.id] = order
    return seq


def replay(stream: OrderStream, check_trades: bool = True) -> np.ndarray:
    """Re-run the recorded events through a fresh book.

    Returns the per-slot mid series (ticks). With `check_trades`, asserts
    the book reproduces the recorded TRADE events exactly.
    """
    book = Book(stream.tick_size, stream.lot_size, stream.open_price_ticks)
    mid_slot = np.empty(stream.slots_per_day)
    ev_iter = iter(stream.events)
    pending = next(ev_iter, None)
    for slot in range(stream.slots_per_day):
        while pending is not None and pending.slot == slot:
            e = pending
            if e.kind == "PLACE":
                order = LimitOrder(e.order_id, e.agent, Side(e.side),
                                   e.price, e.size, slot)
                trades = book.place_limit(order, slot)
                for tr in trades:
                    pending = next(ev_iter, None)
                    if check_trades:
                        assert pending is not None and pending.kind == "TRADE"
                        assert (pending.order_id, pending.match_id,
                                pending.price, pending.size) == \
                               (tr.maker, tr.taker, tr.price, tr.size), \
                            "replay diverged from recorded trades"
            elif e.kind == "CANCEL":
                book.cancel(e.order_id)
            pending = next(ev_iter, None)
        mid_slot[slot] = book.mid_price()
    return mid_slot


# -- persistence ------------------------------------------------------------------

EVENT_HEADER = ["slot", "seq", "kind", "order_id", "agent", "side",
                "price_ticks", "size_lots", "match_id"]


def write_stream(stream: OrderStream, prefix: Path):
    """Write events CSV, per-minute mid CSV, and a metadata sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{prefix}.events.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVENT_HEADER)
        for e in stream.events:
            w.writerow([e.slot, e.seq, e.kind, e.order_id, e.agent, e.side,
                        e.price, e.size, e.match_id])
    with open(f"{prefix}.mids.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["minute", "mid_ticks"])
        for i, m in enumerate(stream.mid_minute):
            w.writerow([i, repr(float(m))])
    meta = {
        "open_price": stream.open_price,
        "tick_size": stream.tick_size,
        "lot_size": stream.lot_size,
        "slots_per_day": stream.slots_per_day,
        "seed": stream.seed,
    }
    with open(f"{prefix}.meta.yaml", "w") as f:
        yaml.safe_dump(meta, f, sort_keys=True)


def read_stream(prefix: Path) -> OrderStream:
    prefix = Path(prefix)
    with open(f"{prefix}.meta.yaml") as f:
        meta = yaml.safe_load(f)
    stream = OrderStream(meta["open_price"], meta["tick_size"], meta["lot_size"],
                         meta["slots_per_day"], meta["seed"])
    with open(f"{prefix}.events.csv", newline="") as f:
        for row in csv.DictReader(f):
            stream.events.append(Event(
                int(row["slot"]), int(row["seq"]), row["kind"],
                int(row["order_id"]), int(row["agent"]), int(row["side"]),
                int(row["price_ticks"]), int(row["size_lots"]), int(row["match_id"])))
    mids = []
    with open(f"{prefix}.mids.csv", newline="") as f:
        for row in csv.DictReader(f):
            mids.append(float(row["mid_ticks"]))
    stream.mid_minute = np.array(mids)
    return stream
