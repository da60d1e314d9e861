"""Find the locations a loop-carried computation must checkpoint.

A location is kept when it was defined before the main loop, is used inside
it, and takes at least two distinct values there.  The pipeline is
``parse_trace -> build_sets -> filter_varying -> dedupe -> match_locations``.
"""

from dataclasses import dataclass, field

from .trace import MEM, REG, Alloc, LoopBegin, MissingLoopBegin, mem, parse_trace


@dataclass(frozen=True)
class Definition:
    location: object
    seq: int
    line_no: int = None
    name: str = None


@dataclass
class LocationSets:
    # (Location, [values in trace order]), in first-use order
    locs_in_loop: list = field(default_factory=list)
    # Definition entries, possibly repeated until dedupe
    locs_before_loop: list = field(default_factory=list)


@dataclass(frozen=True)
class SourceInfo:
    line_no: int
    name: str
    extent: tuple = None


@dataclass(frozen=True)
class CheckpointObject:
    name: str
    kind: str
    line_no: int
    base: int = None
    length: int = None
    n_locations: int = 1


@dataclass
class CheckpointSet:
    locations: list = field(default_factory=list)
    source_map: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.locations)

    def objects(self):
        """Locations grouped into data objects, in first-use order."""
        out = {}
        for loc in self.locations:
            info = self.source_map[loc]
            if loc.kind == REG:
                key = (REG, loc.id)
                name = loc.id
            elif info.extent is not None:
                key = (MEM, info.extent)
                name = info.name or f"0x{info.extent[0]:x}"
            else:
                key = (MEM, loc.id)
                name = info.name or f"0x{loc.id:x}"
            if key in out:
                out[key][1] += 1
                continue
            base, length = info.extent if info.extent else (
                (loc.id, 1) if loc.kind == MEM else (None, None))
            out[key] = [(name, loc.kind, info.line_no, base, length), 1]
        return [CheckpointObject(*fields_, n_locations=n) for fields_, n in out.values()]

    def object_names(self):
        return [o.name for o in self.objects()]


def _loop_index(records):
    for i, rec in enumerate(records):
        if isinstance(rec.marker, LoopBegin):
            return i
    raise MissingLoopBegin("trace has no LOOP_BEGIN marker")


def build_sets(records):
    """One pass over the trace: before-loop definitions and in-loop value lists."""
    start = _loop_index(records)
    sets = LocationSets()
    values = {}
    for rec in records[:start]:
        m = rec.marker
        if isinstance(m, Alloc):
            loc = mem(m.base, (m.base, m.length))
            sets.locs_before_loop.append(Definition(loc, rec.seq, None, m.name))
        elif m is None:
            for loc, _ in rec.writes:
                sets.locs_before_loop.append(Definition(loc, rec.seq, rec.line_no))
    for rec in records[start + 1:]:
        if rec.marker is not None:
            continue
        for loc, v in rec.reads + rec.writes:
            if loc not in values:
                values[loc] = []
                sets.locs_in_loop.append((loc, values[loc]))
            values[loc].append(v)
    return sets


def filter_varying(sets):
    """Drop in-loop locations whose invocation values never change."""
    kept = [(loc, vals) for loc, vals in sets.locs_in_loop if len(set(vals)) >= 2]
    return LocationSets(kept, list(sets.locs_before_loop))


def dedupe(sets):
    in_loop = {}
    for loc, vals in sets.locs_in_loop:
        if loc in in_loop:
            in_loop[loc] = in_loop[loc] + list(vals)
        else:
            in_loop[loc] = list(vals)
    before = {}
    for d in sets.locs_before_loop:
        prev = before.get(d.location)
        # the definition live at loop entry wins; an allocation beats a bare write
        if prev is None or d.location.alloc_extent is not None \
                or prev.location.alloc_extent is None:
            before[d.location] = d
    return LocationSets(list(in_loop.items()), list(before.values()))


def match_locations(sets):
    regs = {}
    extents = []
    exact = {}
    for d in sets.locs_before_loop:
        loc = d.location
        if loc.kind == REG:
            regs[loc.id] = d
        elif loc.alloc_extent is not None:
            extents.append(d)
        else:
            exact[loc.id] = d
    extents.sort(key=lambda d: d.seq)
    out = CheckpointSet()
    for loc, _ in sets.locs_in_loop:
        if loc.kind == REG:
            d = regs.get(loc.id)
            if d is not None:
                out.locations.append(loc)
                out.source_map[loc] = SourceInfo(d.line_no, loc.id)
            continue
        owner = None
        for d in reversed(extents):
            if d.location.contains(loc.id):
                owner = d
                break
        if owner is not None:
            out.locations.append(loc)
            out.source_map[loc] = SourceInfo(owner.line_no, owner.name,
                                             owner.location.alloc_extent)
        elif loc.id in exact:
            d = exact[loc.id]
            out.locations.append(loc)
            out.source_map[loc] = SourceInfo(d.line_no, d.name)
    return out


def analyze_records(records):
    return match_locations(dedupe(filter_varying(build_sets(records))))


def analyze(stream):
    return analyze_records(parse_trace(stream))
