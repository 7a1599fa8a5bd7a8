"""Deterministic discrete-event network simulator.

Links are FIFO store-and-forward pipes with per-pair latency and bandwidth.
Loss is modeled the way TCP exhibits it: a lost frame adds one retransmission
timeout to the whole stream (head-of-line blocking), never a silent drop.
Self-delivery is immediate and loss-free. Given the same scenario, seed and
protocol inputs, two runs produce byte-identical event traces.
"""

import heapq
import random
from dataclasses import dataclass, replace

from .adversary import make_strategy
from .kernels import SimLinkEngine
from .messages import KIND_NAMES, frame_size
from .pipeline import Replica


class UnknownPeer(Exception):
    pass


# -- faults -----------------------------------------------------------------


@dataclass(frozen=True)
class Crash:
    replica: int


@dataclass(frozen=True)
class CrashRegion:
    replicas: tuple


@dataclass(frozen=True)
class Partition:
    side_a: frozenset
    side_b: frozenset
    duration: float


@dataclass(frozen=True)
class Byzantine:
    replica: int
    behavior: str


def _full(n, value):
    return [[value] * n for _ in range(n)]


@dataclass
class SimScenario:
    """Network shape plus scheduled faults; everything a run needs except the
    protocol instances themselves."""

    n: int
    latency: list  # one-way delay, seconds, per ordered pair
    bandwidth: list  # bytes/s per ordered pair
    loss: list  # loss probability per ordered pair, [0, 1)
    seed: int = 0
    faults: tuple = ()
    rto: float = 0.2  # retransmission delay charged per lost frame

    def __post_init__(self):
        for name, m in (("latency", self.latency), ("bandwidth", self.bandwidth), ("loss", self.loss)):
            if len(m) != self.n or any(len(row) != self.n for row in m):
                raise ValueError(f"{name} must be {self.n}x{self.n}")
        if any(v < 0 for row in self.latency for v in row):
            raise ValueError("latency must be >= 0")
        if any(not 0 <= v < 1 for row in self.loss for v in row):
            raise ValueError("loss must be in [0, 1)")
        if any(v <= 0 for row in self.bandwidth for v in row):
            raise ValueError("bandwidth must be > 0")

    @classmethod
    def uniform(cls, n, latency, bandwidth, loss=0.0, seed=0, faults=(), rto=0.2):
        return cls(
            n, _full(n, latency), _full(n, bandwidth), _full(n, loss), seed, tuple(faults), rto
        )

    @classmethod
    def regions(
        cls, n, n_regions, intra_latency, inter_latency, bandwidth,
        loss=0.0, seed=0, faults=(), rto=0.2,
    ):
        """n replicas split round-robin across n_regions regions."""
        lat = _full(n, 0.0)
        for i in range(n):
            for j in range(n):
                same = i % n_regions == j % n_regions
                lat[i][j] = intra_latency if same else inter_latency
        return cls(n, lat, _full(n, bandwidth), _full(n, loss), seed, tuple(faults), rto)

    @classmethod
    def region_of(cls, replica, n_regions):
        return replica % n_regions

    @classmethod
    def from_file(cls, path):
        import tomli

        with open(path, "rb") as fh:
            data = tomli.load(fh)
        faults = tuple(
            (spec.pop("time", 0.0), _fault_from_dict(spec)) for spec in data.pop("faults", [])
        )
        n = data.pop("n")
        lat = data.pop("latency_matrix", None) or _full(n, data.pop("latency", 0.0))
        bw = data.pop("bandwidth_matrix", None) or _full(n, data.pop("bandwidth", 125e6))
        loss = data.pop("loss_matrix", None) or _full(n, data.pop("loss", 0.0))
        return cls(n, lat, bw, loss, data.pop("seed", 0), faults, data.pop("rto", 0.2))


def _fault_from_dict(spec):
    kind = spec["kind"]
    if kind == "crash":
        return Crash(spec["replica"])
    if kind == "crash_region":
        return CrashRegion(tuple(spec["replicas"]))
    if kind == "partition":
        return Partition(frozenset(spec["side_a"]), frozenset(spec["side_b"]), spec["duration"])
    if kind == "byzantine":
        return Byzantine(spec["replica"], spec["behavior"])
    raise ValueError(f"unknown fault kind {kind!r}")


# -- trace --------------------------------------------------------------------

TRACE_COMMITS = "commits"
TRACE_FULL = "full"


class EventTrace:
    """Totally ordered record of the run: commits, epoch-state transitions and
    fault events always; per-message deliveries at level 'full'."""

    def __init__(self, level=TRACE_COMMITS):
        self.level = level
        self.rows = []

    def add(self, row):
        self.rows.append(row)

    def rows_of(self, tag):
        return [r for r in self.rows if r[1] == tag]

    def to_csv(self):
        lines = ["time,event,fields"]
        for row in self.rows:
            t, tag = row[0], row[1]
            rest = ";".join(str(x) for x in row[2:])
            lines.append(f"{t!r},{tag},{rest}")
        return "\n".join(lines) + "\n"


# -- engine ---------------------------------------------------------------------


class SimServices:
    """Transport endpoint handed to one replica."""

    __slots__ = ("net", "me", "_last_bytes", "_last_time")

    def __init__(self, net, me):
        self.net = net
        self.me = me
        self._last_bytes = 0
        self._last_time = 0.0

    def now(self):
        return self.net.time

    def send(self, dest, env):
        if not 0 <= dest < self.net.n:
            raise UnknownPeer(dest)
        self.net.send_from(self.me, dest, env)

    def broadcast(self, env):
        self.net.broadcast_from(self.me, env)

    def schedule(self, delay, fn):
        me = self.me
        net = self.net

        def fire():
            if net.crash_time.get(me) is None:
                fn()

        net.schedule(delay, fire)

    def tx_rate_sample(self):
        now = self.net.time
        sent = self.net.sent_bytes(self.me)
        elapsed = now - self._last_time
        delta = sent - self._last_bytes
        self._last_bytes = sent
        self._last_time = now
        if elapsed <= 0:
            return 0.0
        return delta / elapsed


class SimNet:
    def __init__(self, scenario, trace_level=TRACE_COMMITS):
        self.scenario = scenario
        self.n = scenario.n
        self.time = 0.0
        self.seq = 0
        self.rng = random.Random(scenario.seed)
        self.nodes = [None] * self.n
        self.crash_time = {}
        self.partitions = []  # (side_a, side_b, end_time)
        self.held = {}  # (i, j) -> frames waiting for a partition to heal
        self.strategies = {}
        self.trace = EventTrace(trace_level)
        self._record_deliveries = trace_level == TRACE_FULL
        if SimLinkEngine is not None:
            self.engine = SimLinkEngine(
                self.n, scenario.latency, scenario.bandwidth, scenario.loss,
                scenario.rto, self.rng,
            )
            self.engine.bind(self._deliver)
            self.heap = self.engine.heap
        else:
            self.engine = None
            self.heap = []
            self.busy_until = {}
            self.bytes_sent = [0] * self.n
        for at, fault in scenario.faults:
            self.schedule_abs(at, self._apply_fault, fault)

    # -- scheduling ------------------------------------------------------------

    def schedule(self, delay, fn, *args):
        if self.engine is not None:
            self.engine.push(self.time + delay, fn, args)
        else:
            heapq.heappush(self.heap, (self.time + delay, self.seq, fn, args))
            self.seq += 1

    def schedule_abs(self, at, fn, *args):
        if self.engine is not None:
            self.engine.push(at, fn, args)
        else:
            heapq.heappush(self.heap, (at, self.seq, fn, args))
            self.seq += 1

    def run(self, horizon):
        """Execute events up to (and including) the horizon; returns the trace.
        Events left in the queue mean the run stopped mid-protocol."""
        heap = self.heap
        while heap and heap[0][0] <= horizon:
            t, _, fn, args = heapq.heappop(heap)
            self.time = t
            fn(*args)
        self.time = horizon
        return self.trace

    def attach(self, replicas):
        if len(replicas) != self.n:
            raise ValueError("need one protocol instance per replica")
        self.nodes = list(replicas)
        for i, node in enumerate(replicas):
            period = getattr(node, "cfg", None)
            period = period.idle_sample_period if period is not None else 0.002
            self.schedule(period, self._tick, i, period)

    def _tick(self, i, period):
        if i in self.crash_time:
            return
        self.nodes[i].on_tick()
        self.schedule(period, self._tick, i, period)

    # -- transport ---------------------------------------------------------------

    def sent_bytes(self, i):
        if self.engine is not None:
            return self.engine.sent_bytes(i)
        return self.bytes_sent[i]

    def seq_total(self):
        """Events scheduled so far (deliveries, timers, ticks)."""
        return self.engine.seq if self.engine is not None else self.seq

    def send_from(self, i, j, env):
        if i in self.crash_time:
            return
        strat = self.strategies.get(i)
        if strat is not None:
            env = strat.transform(j, env, self.time, self.rng)
            if env is None:
                return
        if i == j:
            self.schedule(0.0, self._deliver, j, env)
            return
        size = frame_size(env)
        self._count_sent(i, size)
        if self.partitions and self._partitioned(i, j):
            self.held.setdefault((i, j), []).append(env)
            return
        self._transmit(i, j, env, size)

    def broadcast_from(self, i, env):
        """Fan one envelope out to every replica (including self)."""
        if i in self.crash_time:
            return
        if self.engine is not None and i not in self.strategies and not self.partitions:
            self.engine.broadcast(i, env, self.time)
            return
        strat = self.strategies.get(i)
        time = self.time
        partitions = self.partitions
        transmit = self._transmit
        sent = 0
        for j in range(self.n):
            e = env
            if strat is not None:
                e = strat.transform(j, env, time, self.rng)
                if e is None:
                    continue
            if j == i:
                self.schedule(0.0, self._deliver, j, e)
                continue
            size = frame_size(e)
            sent += size
            if partitions and self._partitioned(i, j):
                self.held.setdefault((i, j), []).append(e)
                continue
            transmit(i, j, e, size)
        self._count_sent(i, sent)

    def _count_sent(self, i, size):
        if self.engine is not None:
            self.engine.add_sent(i, size)
        else:
            self.bytes_sent[i] += size

    def _transmit(self, i, j, env, size):
        if self.engine is not None:
            self.engine.transmit(i, j, env, size, self.time)
            return
        sc = self.scenario
        link = (i, j)
        start = self.busy_until.get(link, 0.0)
        time = self.time
        if start < time:
            start = time
        loss = sc.loss[i][j]
        if loss:
            # loss is per MTU-sized segment; a loss stalls the whole stream
            # for one retransmission timeout (head-of-line blocking)
            segments = (size + 1499) // 1500
            p = loss if segments == 1 else 1.0 - (1.0 - loss) ** segments
            if self.rng.random() < p:
                start += sc.rto
        end = start + size / sc.bandwidth[i][j]
        self.busy_until[link] = end
        heapq.heappush(self.heap, (end + sc.latency[i][j], self.seq, self._deliver, (j, env)))
        self.seq += 1

    def _deliver(self, j, env):
        t = self.time
        sender_crash = self.crash_time.get(env.sender)
        if sender_crash is not None and sender_crash <= t:
            return
        if j in self.crash_time:
            return
        if self._record_deliveries:
            self.trace.add((t, "deliver", j, env.sender, KIND_NAMES[env.kind], env.epoch))
        self.nodes[j].on_envelope(env)

    def _partitioned(self, i, j):
        for side_a, side_b, end in self.partitions:
            if end > self.time and (
                (i in side_a and j in side_b) or (i in side_b and j in side_a)
            ):
                return True
        return False

    # -- faults ---------------------------------------------------------------------

    def _apply_fault(self, fault):
        t = self.time
        if isinstance(fault, Crash):
            self.crash_time[fault.replica] = t
            self.trace.add((t, "fault", "crash", fault.replica))
        elif isinstance(fault, CrashRegion):
            for r in fault.replicas:
                self.crash_time[r] = t
            self.trace.add((t, "fault", "crash_region", ",".join(map(str, fault.replicas))))
        elif isinstance(fault, Partition):
            entry = (fault.side_a, fault.side_b, t + fault.duration)
            self.partitions.append(entry)
            self.trace.add((t, "fault", "partition", sorted(fault.side_a), sorted(fault.side_b)))
            self.schedule(fault.duration, self._heal, entry)
        elif isinstance(fault, Byzantine):
            strat = make_strategy(fault.behavior, fault.replica, self.n)
            self.strategies[fault.replica] = strat
            self.trace.add((t, "fault", "byzantine", fault.replica, fault.behavior))
            if hasattr(strat, "inject"):
                self.schedule(strat.inject_period, self._inject, fault.replica)
        else:
            raise ValueError(f"unknown fault {fault!r}")

    def _heal(self, entry):
        self.partitions.remove(entry)
        self.trace.add((self.time, "fault", "heal", sorted(entry[0]), sorted(entry[1])))
        for (i, j), frames in sorted(self.held.items()):
            if not self._partitioned(i, j):
                for env in frames:
                    if i not in self.crash_time:
                        self._transmit(i, j, env, frame_size(env))
                frames.clear()

    def _inject(self, r):
        if r in self.crash_time:
            return
        strat = self.strategies[r]

        def emit(dest, env):
            if dest is None:
                for j in range(self.n):
                    if j != r:
                        self._transmit_from_raw(r, j, env)
            else:
                self._transmit_from_raw(r, dest, env)

        strat.inject(self.time, emit)
        self.schedule(strat.inject_period, self._inject, r)

    def _transmit_from_raw(self, i, j, env):
        """Injected adversarial frames bypass the strategy transform."""
        size = frame_size(env)
        self._count_sent(i, size)
        if not self._partitioned(i, j):
            self._transmit(i, j, env, size)

    def services_for(self, i):
        return SimServices(self, i)


# -- harness ------------------------------------------------------------------------


def build_cluster(scenario, cfg, app_factory=None, trace_level=TRACE_COMMITS):
    """One Replica per scenario slot, wired to a fresh SimNet."""
    net = SimNet(scenario, trace_level)
    replicas = []
    for i in range(scenario.n):
        rcfg = replace(cfg, replica_id=i)
        app = app_factory(i) if app_factory is not None else None
        replicas.append(Replica(rcfg, net.services_for(i), app=app, trace=net.trace.add))
    net.attach(replicas)
    return net, replicas


def run_sim(scenario, cfg, horizon, app_factory=None, workload=None, trace_level=TRACE_COMMITS):
    """Build a cluster, optionally install a workload, and run to the horizon.

    Returns (trace, replicas); the committed logs live on the replicas.
    """
    net, replicas = build_cluster(scenario, cfg, app_factory, trace_level)
    if workload is not None:
        workload.install(net, replicas)
    trace = net.run(horizon)
    return trace, replicas
