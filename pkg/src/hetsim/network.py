"""Network topology, scenario files, and structural validation.

UNIT CONVENTIONS
    lengths          meters
    speeds           meters / second
    times            seconds
    volumes, flows   whole vehicles

A network mixes two intersection kinds. Links whose downstream end is a
signalized (or virtual, always-green) intersection are sampled at the coarse
period delta_s and treated as a single cell. Links whose downstream end is an
all-way-stop intersection are sampled at the fine period lambda_s and split
into segments, each traversable in one fine period at free speed.

Scenario files are JSON with exactly these top-level keys::

    delta_s         coarse sampling period [s]
    lambda_s        fine sampling period [s]; delta_s must be a multiple
    horizon         number of coarse intervals to simulate
    links           list of link objects
    signalized      list of signalized intersection objects
    nonsignalized   list of all-way-stop intersection objects
    speed_levels    map stream-or-"default" -> descending level list
    demand          map link id -> per-interval vehicle counts
    turning_ratios  map "i->j" -> fraction or per-interval fraction list

Unknown keys anywhere are rejected: a typo should fail loudly, not silently
change the run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

DEFAULT_VEHICLE_LENGTH = 5.0
DEFAULT_MIN_SEPARATION = 1.0

# Destination token for streams that leave the network.
SINK = None


class ScenarioError(ValueError):
    """Raised for malformed scenario files or invalid parameters."""


def _frac(x) -> Fraction:
    """Exact rational from a JSON number (decimal literal semantics)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        # repr() of a float recovers the decimal literal the user wrote
        return Fraction(str(x))
    raise ScenarioError(f"expected a number, got {x!r}")


def link_capacity(length_m: float, vehicle_length: float = DEFAULT_VEHICLE_LENGTH,
                  min_separation: float = DEFAULT_MIN_SEPARATION) -> int:
    """Vehicles a stretch of road can hold: floor(L / (veh + sep)).

    A 200 m link with 5 m vehicles and 1 m separation holds 33.
    """
    if length_m <= 0 or vehicle_length <= 0 or min_separation < 0:
        raise ScenarioError(
            f"bad capacity inputs: L={length_m}, veh={vehicle_length}, sep={min_separation}")
    return int(_frac(length_m) / (_frac(vehicle_length) + _frac(min_separation)))


def partition_link(length_m: float, free_speed: float, lambda_s: float) -> tuple[int, float]:
    """Split a link into fine-rate segments.

    Returns (segment count, segment length). The count is the free-flow
    traversal time in fine periods, rounded half up, floored at one segment;
    segment lengths are uniform.
    """
    if length_m <= 0 or free_speed <= 0 or lambda_s <= 0:
        raise ScenarioError(
            f"bad partition inputs: L={length_m}, v={free_speed}, lambda={lambda_s}")
    ratio = _frac(length_m) / (_frac(free_speed) * _frac(lambda_s))
    n = max(1, int(ratio + Fraction(1, 2)))
    return n, length_m / n


@dataclass(frozen=True)
class Link:
    id: str
    length_m: float
    free_speed: float
    vehicle_length: float = DEFAULT_VEHICLE_LENGTH
    min_separation: float = DEFAULT_MIN_SEPARATION
    exit: bool = False

    def __post_init__(self):
        if not self.id:
            raise ScenarioError("link id must be nonempty")
        if self.length_m <= 0:
            raise ScenarioError(f"link {self.id}: nonpositive length")
        if self.free_speed <= 0:
            raise ScenarioError(f"link {self.id}: nonpositive free speed")
        if self.vehicle_length <= 0 or self.min_separation < 0:
            raise ScenarioError(f"link {self.id}: bad vehicle geometry")

    @property
    def capacity(self) -> int:
        return link_capacity(self.length_m, self.vehicle_length, self.min_separation)

    @property
    def max_density(self) -> Fraction:
        """Jam density in vehicles per meter (exact rational)."""
        return 1 / (_frac(self.vehicle_length) + _frac(self.min_separation))


Stream = tuple[str, Optional[str]]  # (source link, destination link or SINK)


@dataclass(frozen=True)
class SignalizedIntersection:
    """Stage-controlled intersection.

    stages maps stage id -> tuple of streams it turns green; stage images must
    be disjoint. free_streams flow every interval (merging side flows that no
    stage gates). priority orders streams that share a destination; lower
    numbers go first.
    """
    id: str
    stages: Mapping[str, tuple[Stream, ...]]
    free_streams: tuple[Stream, ...] = ()
    priority: Mapping[Stream, int] = field(default_factory=dict)
    virtual: bool = False

    def __post_init__(self):
        if not self.id:
            raise ScenarioError("intersection id must be nonempty")
        if self.virtual and len(self.stages) != 1:
            raise ScenarioError(f"virtual intersection {self.id} must have exactly one stage")
        seen: set[Stream] = set()
        for w, streams in self.stages.items():
            for s in streams:
                if s in seen:
                    raise ScenarioError(
                        f"intersection {self.id}: stream {s} appears in two stages")
                seen.add(s)
        for s in self.free_streams:
            if s in seen:
                raise ScenarioError(
                    f"intersection {self.id}: stream {s} is both staged and free")

    @property
    def stage_ids(self) -> tuple[str, ...]:
        return tuple(self.stages.keys())

    def all_streams(self) -> tuple[Stream, ...]:
        out = []
        for streams in self.stages.values():
            out.extend(streams)
        out.extend(self.free_streams)
        return tuple(out)

    def stage_of(self, stream: Stream) -> Optional[str]:
        for w, streams in self.stages.items():
            if stream in streams:
                return w
        return None


@dataclass(frozen=True)
class NonSignalizedIntersection:
    """All-way stop served first-come-first-served by vehicle column.

    order maps each member link to a distinct positive integer; it breaks
    arrival-time ties (smaller goes first). groups optionally partitions the
    member links into jointly-served signal groups; ungrouped by default.
    """
    id: str
    links: tuple[str, ...]
    order: Mapping[str, int]
    groups: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ScenarioError("intersection id must be nonempty")
        if not self.links:
            raise ScenarioError(f"intersection {self.id}: no member links")
        if set(self.order.keys()) != set(self.links):
            raise ScenarioError(f"intersection {self.id}: order must cover member links exactly")
        vals = list(self.order.values())
        if len(set(vals)) != len(vals):
            raise ScenarioError(f"intersection {self.id}: order values must be distinct")
        if any(v <= 0 for v in vals):
            raise ScenarioError(f"intersection {self.id}: order values must be positive")
        if self.groups:
            flat = [l for g in self.groups for l in g]
            if sorted(flat) != sorted(self.links):
                raise ScenarioError(
                    f"intersection {self.id}: groups must partition the member links")

    def group_of(self, link: str) -> tuple[str, ...]:
        for g in self.groups:
            if link in g:
                return g
        return (link,)


@dataclass(frozen=True)
class SpeedLevelTable:
    """Descending discharge-speed levels l0 >= l1 >= ... > 0, each in (0, 1].

    Index p is the level after r - p + 1 consecutive green intervals; the
    memory depth r is len(levels) - 1.
    """
    levels: tuple[Fraction, ...]

    def __post_init__(self):
        if not self.levels:
            raise ScenarioError("speed table must have at least one level")
        lv = [_frac(x) for x in self.levels]
        object.__setattr__(self, "levels", tuple(lv))
        for a, b in zip(lv, lv[1:]):
            if a < b:
                raise ScenarioError(f"speed levels must be nonincreasing, got {lv}")
        if lv[-1] <= 0 or lv[0] > 1:
            raise ScenarioError(f"speed levels must lie in (0, 1], got {lv}")

    @property
    def memory_depth(self) -> int:
        return len(self.levels) - 1


@dataclass(frozen=True)
class ScenarioConfig:
    delta_s: float
    lambda_s: float
    horizon: int
    demand: Mapping[str, tuple[int, ...]]
    turning: Mapping[Stream, tuple[Fraction, ...]]

    def __post_init__(self):
        if self.delta_s <= 0 or self.lambda_s <= 0:
            raise ScenarioError("sampling periods must be positive")
        m = _frac(self.delta_s) / _frac(self.lambda_s)
        if m.denominator != 1 or m < 1:
            raise ScenarioError(
                f"delta_s ({self.delta_s}) must be a positive integer multiple of "
                f"lambda_s ({self.lambda_s})")
        if self.horizon < 1:
            raise ScenarioError("horizon must be at least one interval")
        for link, counts in self.demand.items():
            if any((not isinstance(c, int)) or c < 0 for c in counts):
                raise ScenarioError(f"demand for {link} must be nonnegative integers")

    @property
    def steps_per_interval(self) -> int:
        return int(_frac(self.delta_s) / _frac(self.lambda_s))

    def demand_at(self, link: str, k: int) -> int:
        """Vehicles queued at the boundary of `link` during interval k (1-based)."""
        counts = self.demand.get(link)
        if counts is None or k > len(counts):
            return 0
        return counts[k - 1]

    def turning_ratio(self, stream: Stream, k: int) -> Fraction:
        ratios = self.turning.get(stream)
        if ratios is None:
            return Fraction(1)
        if k > len(ratios):
            return ratios[-1]
        return ratios[k - 1]


@dataclass(frozen=True)
class Violation:
    where: str
    message: str

    def __str__(self):
        return f"{self.where}: {self.message}"


class NetworkModel:
    """Validated topology with derived routing and sampling structure."""

    def __init__(self, links: Iterable[Link],
                 signalized: Iterable[SignalizedIntersection],
                 nonsignalized: Iterable[NonSignalizedIntersection],
                 speed_tables: Mapping[object, SpeedLevelTable],
                 config: ScenarioConfig):
        self.links: dict[str, Link] = {l.id: l for l in links}
        self.signalized: dict[str, SignalizedIntersection] = {j.id: j for j in signalized}
        self.nonsignalized: dict[str, NonSignalizedIntersection] = {j.id: j for j in nonsignalized}
        self.speed_tables = dict(speed_tables)
        self.config = config
        self._derive()

    # -- derived structure ------------------------------------------------

    def _derive(self):
        cfg = self.config
        self.downstream_node: dict[str, str] = {}     # link -> intersection it feeds
        self.upstream_node: dict[str, str] = {}       # link -> intersection feeding it
        self.streams: list[Stream] = []
        self.stream_node: dict[Stream, str] = {}      # stream -> intersection carrying it

        for j in self.signalized.values():
            for s in j.all_streams():
                self._add_stream(s, j.id)
        for j in self.nonsignalized.values():
            for i in j.links:
                if i in self.downstream_node:
                    raise ScenarioError(f"link {i} feeds two intersections")
                self.downstream_node[i] = j.id
            # streams of an all-way stop come from the turning table
            for stream in cfg.turning:
                src, dst = stream
                if src in j.links:
                    self._add_awsc_stream(stream, j.id)
            # member links with no declared turning entry and exactly nowhere
            # to go must be exits; checked in validate_network

        # exit links discharge straight out of the network
        self.sink_streams: list[Stream] = []
        for l in self.links.values():
            if l.exit:
                s = (l.id, SINK)
                self.sink_streams.append(s)
                if s not in self.stream_node:
                    self.streams.append(s)
                    self.stream_node[s] = "__exit__"

        # sampling kind: fine iff the downstream end is an all-way stop
        self.fine_links: set[str] = set()
        for j in self.nonsignalized.values():
            self.fine_links.update(j.links)
        self.segments: dict[str, tuple[int, float, int]] = {}
        for lid in self.fine_links:
            l = self.links[lid]
            n, seg_len = partition_link(l.length_m, l.free_speed, cfg.lambda_s)
            seg_cap = link_capacity(seg_len, l.vehicle_length, l.min_separation)
            self.segments[lid] = (n, seg_len, seg_cap)

        self.outgoing: dict[str, list[Stream]] = {lid: [] for lid in self.links}
        self.incoming: dict[str, list[Stream]] = {lid: [] for lid in self.links}
        for (src, dst) in self.streams:
            self.outgoing[src].append((src, dst))
            if dst is not SINK:
                self.incoming[dst].append((src, dst))
        for lid in self.links:
            self.outgoing[lid].sort(key=lambda s: (s[1] is None, s[1] or ""))
            self.incoming[lid].sort()

        self._topo_order()

    def _add_stream(self, stream: Stream, node: str):
        src, dst = stream
        if src not in self.links:
            raise ScenarioError(f"stream {stream}: unknown source link {src}")
        if dst is not SINK and dst not in self.links:
            raise ScenarioError(f"stream {stream}: unknown destination link {dst}")
        if stream in self.stream_node:
            raise ScenarioError(f"stream {stream} declared at two intersections")
        if src in self.downstream_node and self.downstream_node[src] != node:
            raise ScenarioError(f"link {src} feeds two intersections")
        self.downstream_node[src] = node
        if dst is not SINK:
            if dst in self.upstream_node and self.upstream_node[dst] != node:
                raise ScenarioError(f"link {dst} is fed by two intersections")
            self.upstream_node[dst] = node
        self.streams.append(stream)
        self.stream_node[stream] = node

    def _add_awsc_stream(self, stream: Stream, node: str):
        src, dst = stream
        if dst is not SINK and dst not in self.links:
            raise ScenarioError(f"stream {stream}: unknown destination link {dst}")
        if stream in self.stream_node:
            return
        if dst is not SINK:
            if dst in self.upstream_node and self.upstream_node[dst] != node:
                raise ScenarioError(f"link {dst} is fed by two intersections")
            self.upstream_node[dst] = node
        self.streams.append(stream)
        self.stream_node[stream] = node

    def _topo_order(self):
        """Order links so every destination is processed before its sources.

        Coarse flow laws read the downstream link's same-interval outflow, so
        links are swept sink-first. Links on a directed cycle cannot be
        ordered; they are flagged and their downstream outflow term reads 0.
        """
        succ = {lid: set() for lid in self.links}
        for (src, dst) in self.streams:
            if dst is not SINK:
                succ[src].add(dst)
        indeg_rev: dict[str, int] = {lid: len(succ[lid]) for lid in self.links}
        order: list[str] = [lid for lid in sorted(self.links) if indeg_rev[lid] == 0]
        pred = {lid: set() for lid in self.links}
        for src, ds in succ.items():
            for d in ds:
                pred[d].add(src)
        queue = list(order)
        seen = set(order)
        while queue:
            nxt = []
            for d in queue:
                for p in sorted(pred[d]):
                    indeg_rev[p] -= 1
                    if indeg_rev[p] == 0 and p not in seen:
                        seen.add(p)
                        order.append(p)
                        nxt.append(p)
            queue = nxt
        self.cyclic_links: set[str] = set(self.links) - seen
        order.extend(sorted(self.cyclic_links))
        self.sweep_order: list[str] = order  # sinks first

    # -- lookups ----------------------------------------------------------

    def speed_table(self, stream: Stream) -> SpeedLevelTable:
        t = self.speed_tables.get(stream)
        if t is None:
            t = self.speed_tables.get("default")
        if t is None:
            raise ScenarioError(f"no speed table for stream {stream} and no default")
        return t

    def is_fine(self, lid: str) -> bool:
        return lid in self.fine_links

    def max_shift(self, lid: str, period_s: float) -> Fraction:
        """Free-flow discharge bound v* . d* . period, exact."""
        l = self.links[lid]
        return _frac(l.free_speed) * l.max_density * _frac(period_s)

    def link_volume_capacity(self, lid: str) -> int:
        return self.links[lid].capacity

    # -- validation -------------------------------------------------------

    def validate(self) -> list[Violation]:
        """Collect every structural violation; empty list means runnable."""
        v: list[Violation] = []
        cfg = self.config

        ids = set(self.links)
        for j in list(self.signalized.values()) + list(self.nonsignalized.values()):
            if j.id in ids:
                v.append(Violation(j.id, "intersection id collides with a link id"))

        for l in self.links.values():
            if l.capacity < 1:
                v.append(Violation(l.id, f"capacity {l.capacity} < 1 vehicle"))
            out = self.outgoing[l.id]
            if l.exit and len(out) > 1:
                v.append(Violation(l.id, "exit link also has onward streams"))
            if not out:
                v.append(Violation(l.id, "dangling link: no outgoing stream and not an exit"))

        for lid in self.fine_links:
            n, seg_len, seg_cap = self.segments[lid]
            if seg_cap < 1:
                v.append(Violation(lid, f"segment capacity {seg_cap} < 1 vehicle"))
            l = self.links[lid]
            if l.exit:
                v.append(Violation(lid, "exit link cannot feed an all-way stop"))

        for j in self.signalized.values():
            if not j.virtual and len(j.stages) < 1:
                v.append(Violation(j.id, "no stages"))
            for s in j.all_streams():
                src, dst = s
                if dst is not SINK and self.links[src].exit:
                    v.append(Violation(j.id, f"stream {s} leaves an exit link"))

        for j in self.nonsignalized.values():
            if j.groups and len(j.groups) < 2:
                v.append(Violation(j.id, "groups must split links into at least two groups"))
            for i in j.links:
                if not self.outgoing[i]:
                    v.append(Violation(j.id, f"member link {i} has nowhere to discharge"))

        # turning ratios: per source link, each interval's fractions over the
        # declared outgoing streams must sum to exactly 1 (implicit exit
        # discharge is a single gamma=1 stream and is excluded)
        for lid, outs in self.outgoing.items():
            declared = [s for s in outs if self.stream_node.get(s) != "__exit__"]
            if not declared:
                continue
            for k in range(1, cfg.horizon + 1):
                total = sum(cfg.turning_ratio(s, k) for s in declared)
                if total != 1:
                    v.append(Violation(
                        lid, f"turning ratios sum to {total} at interval {k}, expected 1"))
                    break
            for s in declared:
                for k in range(1, cfg.horizon + 1):
                    g = cfg.turning_ratio(s, k)
                    if g < 0 or g > 1:
                        v.append(Violation(lid, f"turning ratio {g} for {s} outside [0, 1]"))
                        break

        for lid in cfg.demand:
            if lid not in self.links:
                v.append(Violation(lid, "demand on unknown link"))

        for stream in cfg.turning:
            if stream not in self.stream_node:
                v.append(Violation(f"{stream[0]}->{stream[1]}",
                                   "turning ratio for undeclared stream"))

        for stream in self.streams:
            if stream[1] is SINK:
                continue
            node = self.stream_node[stream]
            if node in self.signalized:
                j = self.signalized[node]
                if j.stage_of(stream) is None and stream not in j.free_streams:
                    v.append(Violation(node, f"stream {stream} neither staged nor free"))

        if self.cyclic_links:
            # cycles are legal but noted: downstream outflow terms read 0 there
            pass

        try:
            for stream in self.streams:
                node = self.stream_node[stream]
                if node in self.signalized and not self.signalized[node].virtual:
                    if self.signalized[node].stage_of(stream) is not None:
                        self.speed_table(stream)
        except ScenarioError as e:
            v.append(Violation("speed_levels", str(e)))

        return v

    def require_valid(self):
        violations = self.validate()
        if violations:
            listing = "; ".join(str(x) for x in violations)
            raise ScenarioError(f"invalid network: {listing}")


# -- scenario file round trip ---------------------------------------------

_TOP_KEYS = {"delta_s", "lambda_s", "horizon", "links", "signalized",
             "nonsignalized", "speed_levels", "demand", "turning_ratios"}
_LINK_KEYS = {"id", "length_m", "free_speed", "vehicle_length", "min_separation", "exit"}
_SIG_KEYS = {"id", "stages", "free_streams", "priority", "virtual"}
_NSIG_KEYS = {"id", "links", "order", "groups"}


def _check_keys(obj: Mapping, allowed: set[str], where: str):
    unknown = set(obj.keys()) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")


def _parse_stream(s) -> Stream:
    """Parse 'A->B'; the reserved destination '@out' means leaving the network."""
    if isinstance(s, str):
        if "->" not in s:
            raise ScenarioError(f"stream {s!r} must look like 'A->B'")
        src, dst = s.split("->", 1)
        return (src, SINK if dst == "@out" else dst)
    if isinstance(s, (list, tuple)) and len(s) == 2:
        return (s[0], SINK if s[1] in (None, "@out") else s[1])
    raise ScenarioError(f"cannot parse stream {s!r}")


def _stream_key(stream: Stream) -> str:
    dst = "@out" if stream[1] is SINK else stream[1]
    return f"{stream[0]}->{dst}"


def parse_scenario(data) -> tuple[NetworkModel, ScenarioConfig]:
    """Build a model from a dict or a JSON file path."""
    if isinstance(data, (str, bytes)):
        with open(data) as fh:
            data = json.load(fh)
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    _check_keys(data, _TOP_KEYS, "scenario")
    for key in ("delta_s", "lambda_s", "horizon", "links"):
        if key not in data:
            raise ScenarioError(f"scenario: missing required key {key!r}")

    links = []
    for obj in data["links"]:
        _check_keys(obj, _LINK_KEYS, f"link {obj.get('id', '?')}")
        links.append(Link(
            id=obj["id"], length_m=obj["length_m"], free_speed=obj["free_speed"],
            vehicle_length=obj.get("vehicle_length", DEFAULT_VEHICLE_LENGTH),
            min_separation=obj.get("min_separation", DEFAULT_MIN_SEPARATION),
            exit=obj.get("exit", False)))

    signalized = []
    for obj in data.get("signalized", []):
        _check_keys(obj, _SIG_KEYS, f"signalized {obj.get('id', '?')}")
        stages = {w: tuple(_parse_stream(s) for s in streams)
                  for w, streams in obj.get("stages", {}).items()}
        priority = {_parse_stream(k): v for k, v in obj.get("priority", {}).items()}
        signalized.append(SignalizedIntersection(
            id=obj["id"], stages=stages,
            free_streams=tuple(_parse_stream(s) for s in obj.get("free_streams", [])),
            priority=priority, virtual=obj.get("virtual", False)))

    nonsignalized = []
    for obj in data.get("nonsignalized", []):
        _check_keys(obj, _NSIG_KEYS, f"nonsignalized {obj.get('id', '?')}")
        nonsignalized.append(NonSignalizedIntersection(
            id=obj["id"], links=tuple(obj["links"]), order=dict(obj["order"]),
            groups=tuple(tuple(g) for g in obj.get("groups", []))))

    tables: dict[object, SpeedLevelTable] = {}
    for key, levels in data.get("speed_levels", {}).items():
        table = SpeedLevelTable(tuple(_frac(x) for x in levels))
        tables["default" if key == "default" else _parse_stream(key)] = table

    demand = {lid: tuple(int(c) for c in counts)
              for lid, counts in data.get("demand", {}).items()}

    turning: dict[Stream, tuple[Fraction, ...]] = {}
    for key, val in data.get("turning_ratios", {}).items():
        stream = _parse_stream(key)
        if isinstance(val, list):
            turning[stream] = tuple(_frac(x) for x in val)
        else:
            turning[stream] = (_frac(val),)

    config = ScenarioConfig(
        delta_s=data["delta_s"], lambda_s=data["lambda_s"],
        horizon=int(data["horizon"]), demand=demand, turning=turning)
    model = NetworkModel(links, signalized, nonsignalized, tables, config)
    return model, config


def serialize_scenario(model: NetworkModel) -> dict:
    """Inverse of parse_scenario; parse(serialize(parse(x))) == parse(x)."""
    cfg = model.config

    def num(x):
        f = _frac(x)
        return int(f) if f.denominator == 1 else float(f)

    out = {
        "delta_s": num(cfg.delta_s),
        "lambda_s": num(cfg.lambda_s),
        "horizon": cfg.horizon,
        "links": [],
        "signalized": [],
        "nonsignalized": [],
        "speed_levels": {},
        "demand": {lid: list(counts) for lid, counts in sorted(cfg.demand.items())},
        "turning_ratios": {},
    }
    for lid in sorted(model.links):
        l = model.links[lid]
        obj = {"id": l.id, "length_m": num(l.length_m), "free_speed": num(l.free_speed)}
        if l.vehicle_length != DEFAULT_VEHICLE_LENGTH:
            obj["vehicle_length"] = num(l.vehicle_length)
        if l.min_separation != DEFAULT_MIN_SEPARATION:
            obj["min_separation"] = num(l.min_separation)
        if l.exit:
            obj["exit"] = True
        out["links"].append(obj)
    for jid in sorted(model.signalized):
        j = model.signalized[jid]
        obj = {"id": j.id,
               "stages": {w: [_stream_key(s) for s in streams]
                          for w, streams in j.stages.items()}}
        if j.free_streams:
            obj["free_streams"] = [_stream_key(s) for s in j.free_streams]
        if j.priority:
            obj["priority"] = {_stream_key(s): p
                               for s, p in sorted(j.priority.items(), key=lambda kv: _stream_key(kv[0]))}
        if j.virtual:
            obj["virtual"] = True
        out["signalized"].append(obj)
    for jid in sorted(model.nonsignalized):
        j = model.nonsignalized[jid]
        obj = {"id": j.id, "links": list(j.links), "order": dict(j.order)}
        if j.groups:
            obj["groups"] = [list(g) for g in j.groups]
        out["nonsignalized"].append(obj)
    for key, table in model.speed_tables.items():
        name = key if key == "default" else _stream_key(key)
        out["speed_levels"][name] = [float(l) for l in table.levels]
    for stream, ratios in sorted(model.config.turning.items(), key=lambda kv: _stream_key(kv[0])):
        vals = [float(g) for g in ratios]
        out["turning_ratios"][_stream_key(stream)] = vals if len(vals) > 1 else vals[0]
    return out
