"""Event-data ingestion.

Parses analyst event tables, assigns events to 15-minute blocks, derives
game state and red-card state at the start of each block, and produces the
two inputs the models consume: a per-(fixture, team, block) count panel and a
list of chance observations with assist locations and assist-to-chance
offsets.

Coordinates follow the attacking team's frame: ``(0, 0)`` is the centre of
the defended goal, ``x`` runs across the pitch in ``[-136, 136]`` and ``y``
along it in ``[0, 420]``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DataIntegrityError, DomainError, SchemaError

logger = logging.getLogger(__name__)

X_MIN, X_MAX = -136.0, 136.0
Y_MIN, Y_MAX = 0.0, 420.0
N_BLOCKS = 6
BLOCK_MINUTES = 15.0

MISSING = ("", "---")

GOAL = "Goal"
CHANCE = "Chance"
YELLOW_CARD = "YellowCard"
RED_CARD = "RedCard"
OTHER = "Other"
EVENT_TYPES = (GOAL, CHANCE, YELLOW_CARD, RED_CARD, OTHER)

_TYPE_ALIASES = {
    "goal": GOAL,
    "chance": CHANCE,
    "yellowcard": YELLOW_CARD,
    "yellow": YELLOW_CARD,
    "redcard": RED_CARD,
    "red": RED_CARD,
    "secondyellowcard": RED_CARD,
}

CANONICAL_COLUMNS = (
    "fixture",
    "date",
    "team",
    "time",
    "half",
    "type",
    "event_player",
    "assist_player",
    "assist_x",
    "assist_y",
    "chance_x",
    "chance_y",
)
OPTIONAL_COLUMNS = frozenset({"half", "date"})


@dataclass(frozen=True)
class PitchLocation:
    x: float
    y: float

    def __post_init__(self):
        if not (X_MIN <= self.x <= X_MAX and Y_MIN <= self.y <= Y_MAX):
            raise DomainError(f"pitch location ({self.x}, {self.y}) is off the pitch")


@dataclass(frozen=True)
class DeltaLocation:
    dx: float
    dy: float

    def __post_init__(self):
        if not (-2 * X_MAX <= self.dx <= 2 * X_MAX and -Y_MAX <= self.dy <= Y_MAX):
            raise DomainError(f"offset ({self.dx}, {self.dy}) exceeds pitch extent")


@dataclass(frozen=True, order=True)
class PlayerKey:
    """A player as seen by one team; a transferred player gets a new key."""

    player_id: str
    team_id: str

    def __str__(self):
        return f"{self.player_id}@{self.team_id}"

    @classmethod
    def parse(cls, text: str) -> "PlayerKey":
        player, _, team = text.rpartition("@")
        if not player:
            raise DomainError(f"malformed player key {text!r}")
        return cls(player, team)


@dataclass(frozen=True)
class EventRecord:
    fixture_id: str
    date: dt.date | None
    team_id: str
    minute: float
    half: int | None
    event_type: str
    event_player: str | None
    assist_player: str | None = None
    assist_loc: PitchLocation | None = None
    chance_loc: PitchLocation | None = None

    @property
    def is_chance(self) -> bool:
        return self.event_type in (GOAL, CHANCE)

    @property
    def is_complete_chance(self) -> bool:
        return (
            self.is_chance
            and self.assist_player is not None
            and self.assist_loc is not None
            and self.chance_loc is not None
        )

    @property
    def block(self) -> int:
        return assign_block(self.minute, self.half)


@dataclass(frozen=True)
class ChanceObservation:
    fixture_id: str
    team_id: str
    block: int
    assist_player: PlayerKey
    chance_player: PlayerKey
    assist_loc: PitchLocation
    delta: DeltaLocation

    @property
    def chance_loc(self) -> PitchLocation:
        return PitchLocation(self.assist_loc.x + self.delta.dx, self.assist_loc.y + self.delta.dy)


@dataclass(frozen=True)
class Fixture:
    fixture_id: str
    home: str
    away: str
    date: dt.date | None = None

    @property
    def teams(self) -> tuple[str, str]:
        return (self.home, self.away)

    def opponent(self, team_id: str) -> str:
        if team_id == self.home:
            return self.away
        if team_id == self.away:
            return self.home
        raise DataIntegrityError(f"team {team_id} does not play in fixture {self.fixture_id}")


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


class EventList(list):
    """A list of :class:`EventRecord` that also carries row-level parse errors."""

    def __init__(self, records: Iterable[EventRecord] = (), errors: Iterable[RowError] = ()):
        super().__init__(records)
        self.errors: list[RowError] = list(errors)


# ---------------------------------------------------------------------------
# parsing


def _normalise_type(raw: str) -> str:
    key = "".join(ch for ch in raw.lower() if ch.isalnum())
    return _TYPE_ALIASES.get(key, OTHER)


def _cell(row: Mapping[str, str], column: str | None) -> str | None:
    if column is None:
        return None
    value = row.get(column)
    if value is None:
        return None
    value = value.strip()
    return None if value in MISSING else value


def _number(value: str | None, name: str) -> float | None:
    if value is None:
        return None
    try:
        out = float(value)
    except ValueError:
        raise ValueError(f"malformed numeric cell {name}={value!r}") from None
    if not math.isfinite(out):
        raise ValueError(f"non-finite numeric cell {name}={value!r}")
    return out


def _location(x: float | None, y: float | None, what: str) -> PitchLocation | None:
    if x is None and y is None:
        return None
    if x is None or y is None:
        raise ValueError(f"{what} location has only one coordinate")
    return PitchLocation(x, y)


def parse_events(
    source: IO[str] | str,
    schema: Mapping[str, str] | None = None,
    delimiter: str = ",",
) -> EventList:
    """Parse a delimiter-separated event table.

    Parameters
    ----------
    source : text stream or str
        Table with a header row. A ``str`` is treated as the table contents.
    schema : mapping, optional
        Canonical field name -> source column name. Unlisted canonical fields
        map to a column of the same name.
    delimiter : str
        Field delimiter.

    Returns
    -------
    EventList
        One record per well-formed row; malformed rows are skipped and listed
        in ``.errors`` with their line number.

    Raises
    ------
    SchemaError
        If a mandatory column is absent from the header.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    columns = {name: name for name in CANONICAL_COLUMNS}
    if schema:
        unknown = set(schema) - set(CANONICAL_COLUMNS)
        if unknown:
            raise SchemaError(f"schema maps unknown canonical fields: {sorted(unknown)}")
        columns.update(schema)

    reader = csv.DictReader(source, delimiter=delimiter)
    header = [h.strip() for h in reader.fieldnames or []]
    reader.fieldnames = header
    if not header:
        raise SchemaError("input has no header row")
    for name, col in list(columns.items()):
        if col not in header:
            if name in OPTIONAL_COLUMNS:
                columns[name] = None
            else:
                raise SchemaError(f"missing mandatory column {col!r} (field {name!r})")

    out = EventList()
    for row in reader:
        line = reader.line_num
        try:
            out.append(_parse_row(row, columns))
        except (ValueError, DomainError) as exc:
            out.errors.append(RowError(line, str(exc)))
    if out.errors:
        logger.warning("%d malformed rows skipped while parsing events", len(out.errors))
    return out


def _parse_row(row: Mapping[str, str], columns: Mapping[str, str | None]) -> EventRecord:
    c = {name: _cell(row, col) for name, col in columns.items()}
    if c["fixture"] is None or c["team"] is None:
        raise ValueError("fixture and team are required")
    minute = _number(c["time"], "time")
    if minute is None:
        raise ValueError("time is required")
    if minute < 0:
        raise ValueError(f"negative minute {minute}")
    half = None
    if c["half"] is not None:
        half_val = _number(c["half"], "half")
        if half_val not in (1.0, 2.0):
            raise ValueError(f"half must be 1 or 2, got {c['half']!r}")
        half = int(half_val)
    date = None
    if c["date"] is not None:
        try:
            date = dt.date.fromisoformat(c["date"])
        except ValueError:
            raise ValueError(f"malformed date {c['date']!r}") from None
    event_type = _normalise_type(c["type"] or "")
    assist_loc = _location(_number(c["assist_x"], "assist_x"), _number(c["assist_y"], "assist_y"), "assist")
    chance_loc = _location(_number(c["chance_x"], "chance_x"), _number(c["chance_y"], "chance_y"), "chance")
    return EventRecord(
        fixture_id=c["fixture"],
        date=date,
        team_id=c["team"],
        minute=minute,
        half=half,
        event_type=event_type,
        event_player=c["event_player"],
        assist_player=c["assist_player"],
        assist_loc=assist_loc,
        chance_loc=chance_loc,
    )


def _fmt(value) -> str:
    if value is None:
        return "---"
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e15:
            return str(int(value))
        return repr(value)
    return str(value)


def write_events(events: Iterable[EventRecord], fh: IO[str], include_half: bool = True) -> None:
    """Write events in the canonical CSV layout (inverse of :func:`parse_events`)."""
    cols = [c for c in CANONICAL_COLUMNS if include_half or c != "half"]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(cols)
    for ev in events:
        a, ch = ev.assist_loc, ev.chance_loc
        values = {
            "fixture": ev.fixture_id,
            "date": ev.date.isoformat() if ev.date else None,
            "team": ev.team_id,
            "time": ev.minute,
            "half": ev.half,
            "type": ev.event_type,
            "event_player": ev.event_player,
            "assist_player": ev.assist_player,
            "assist_x": a.x if a else None,
            "assist_y": a.y if a else None,
            "chance_x": ch.x if ch else None,
            "chance_y": ch.y if ch else None,
        }
        writer.writerow([_fmt(values[c]) for c in cols])


def parse_fixtures(source: IO[str] | str, delimiter: str = ",") -> list[Fixture]:
    """Parse fixture metadata with columns ``fixture, home, away`` and optional ``date``."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source, delimiter=delimiter)
    header = set(reader.fieldnames or [])
    missing = {"fixture", "home", "away"} - header
    if missing:
        raise SchemaError(f"fixture table missing columns {sorted(missing)}")
    fixtures = []
    for row in reader:
        date = row.get("date") or None
        fixtures.append(
            Fixture(
                row["fixture"].strip(),
                row["home"].strip(),
                row["away"].strip(),
                dt.date.fromisoformat(date.strip()) if date else None,
            )
        )
    return fixtures


def write_fixtures(fixtures: Iterable[Fixture], fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["fixture", "date", "home", "away"])
    for f in fixtures:
        writer.writerow([f.fixture_id, f.date.isoformat() if f.date else "", f.home, f.away])


# ---------------------------------------------------------------------------
# blocks and match state


def assign_block(minute: float, half: int | None = None) -> int:
    """Return the 1-based 15-minute block containing ``minute``.

    Blocks are the half-open intervals ``(15(r-1), 15r]`` with minute 0 in
    block 1. First-half stoppage time folds into block 3 and second-half
    stoppage time into block 6. Without a known half, minutes past 90 fold
    into block 6.
    """
    if minute < 0 or not math.isfinite(minute):
        raise DomainError(f"minute must be a finite non-negative number, got {minute}")
    if half == 1 and minute > 45:
        return 3
    if half == 2 and minute > 90:
        return 6
    return min(N_BLOCKS, max(1, math.ceil(minute / BLOCK_MINUTES)))


def _fixture_teams(events: Sequence[EventRecord], fixture_id: str, fixture: Fixture | None) -> set[str]:
    teams = {ev.team_id for ev in events if ev.fixture_id == fixture_id}
    if fixture is not None:
        teams |= set(fixture.teams)
    if len(teams) != 2:
        raise DataIntegrityError(
            f"fixture {fixture_id} has {len(teams)} distinct teams ({sorted(teams)}); expected 2"
        )
    return teams


def _before_block(ev: EventRecord, block: int) -> bool:
    return ev.block < block or ev.minute < BLOCK_MINUTES * (block - 1)


def _state(events, fixture_id, team_id, block, event_type, sign, fixture) -> int:
    if not 1 <= block <= N_BLOCKS:
        raise DomainError(f"block must be in 1..{N_BLOCKS}, got {block}")
    teams = _fixture_teams(events, fixture_id, fixture)
    if team_id not in teams:
        raise DataIntegrityError(f"team {team_id} not in fixture {fixture_id}")
    total = 0
    for ev in events:
        if ev.fixture_id != fixture_id or ev.event_type != event_type:
            continue
        if _before_block(ev, block):
            total += sign if ev.team_id == team_id else -sign
    return total


def derive_game_state(
    events: Sequence[EventRecord],
    fixture_id: str,
    team_id: str,
    block: int,
    fixture: Fixture | None = None,
) -> int:
    """Goal difference from ``team_id``'s perspective at the start of ``block``."""
    return _state(events, fixture_id, team_id, block, GOAL, +1, fixture)


def derive_red_card_state(
    events: Sequence[EventRecord],
    fixture_id: str,
    team_id: str,
    block: int,
    fixture: Fixture | None = None,
) -> int:
    """Player-count difference from ``team_id``'s perspective at the start of ``block``.

    A red card against the team counts -1, against the opponent +1.
    """
    return _state(events, fixture_id, team_id, block, RED_CARD, -1, fixture)


# ---------------------------------------------------------------------------
# panel


@dataclass(frozen=True)
class PanelRow:
    fixture_id: str
    team_id: str
    opponent_id: str
    block: int
    is_home: bool
    N: int
    G: int
    R: int


@dataclass
class BlockPanel:
    """Per (fixture, team, block) chance counts with covariates, stored columnwise."""

    fixture_id: np.ndarray
    team_id: np.ndarray
    opponent_id: np.ndarray
    block: np.ndarray
    is_home: np.ndarray
    N: np.ndarray
    G: np.ndarray
    R: np.ndarray

    FIELDS = ("fixture_id", "team_id", "opponent_id", "block", "is_home", "N", "G", "R")

    def __len__(self):
        return len(self.N)

    def __iter__(self) -> Iterator[PanelRow]:
        return self.rows()

    def rows(self) -> Iterator[PanelRow]:
        for i in range(len(self)):
            yield PanelRow(
                str(self.fixture_id[i]),
                str(self.team_id[i]),
                str(self.opponent_id[i]),
                int(self.block[i]),
                bool(self.is_home[i]),
                int(self.N[i]),
                int(self.G[i]),
                int(self.R[i]),
            )

    @classmethod
    def from_rows(cls, rows: Iterable[PanelRow]) -> "BlockPanel":
        rows = list(rows)
        return cls(
            fixture_id=np.array([r.fixture_id for r in rows], dtype=object),
            team_id=np.array([r.team_id for r in rows], dtype=object),
            opponent_id=np.array([r.opponent_id for r in rows], dtype=object),
            block=np.array([r.block for r in rows], dtype=np.int64),
            is_home=np.array([r.is_home for r in rows], dtype=bool),
            N=np.array([r.N for r in rows], dtype=np.int64),
            G=np.array([r.G for r in rows], dtype=np.int64),
            R=np.array([r.R for r in rows], dtype=np.int64),
        )

    @property
    def teams(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.team_id) | set(self.opponent_id)))

    def records(self) -> list[dict]:
        return [asdict(r) for r in self.rows()]


def _index_fixtures(events, fixtures) -> tuple[dict[str, Fixture], dict[str, list[EventRecord]]]:
    by_id = {f.fixture_id: f for f in fixtures}
    grouped: dict[str, list[EventRecord]] = defaultdict(list)
    for ev in events:
        fx = by_id.get(ev.fixture_id)
        if fx is None:
            raise DataIntegrityError(f"event references unknown fixture {ev.fixture_id}")
        if ev.team_id not in fx.teams:
            raise DataIntegrityError(
                f"event team {ev.team_id} is not one of fixture {ev.fixture_id}'s teams {fx.teams}"
            )
        grouped[ev.fixture_id].append(ev)
    return by_id, grouped


def build_block_panel(events: Sequence[EventRecord], fixtures: Sequence[Fixture]) -> BlockPanel:
    """Count chances per (fixture, team, block) and attach G, R and the home flag.

    Goals count as chances. Only chance events carrying both locations and an
    assist player are counted, matching :func:`extract_chances`.
    """
    _, grouped = _index_fixtures(events, fixtures)
    rows = []
    for fx in fixtures:
        fevents = grouped.get(fx.fixture_id, [])
        counts = defaultdict(int)
        for ev in fevents:
            if ev.is_complete_chance:
                counts[ev.team_id, ev.block] += 1
        for team in fx.teams:
            opp = fx.opponent(team)
            for r in range(1, N_BLOCKS + 1):
                rows.append(
                    PanelRow(
                        fixture_id=fx.fixture_id,
                        team_id=team,
                        opponent_id=opp,
                        block=r,
                        is_home=team == fx.home,
                        N=counts[team, r],
                        G=derive_game_state(fevents, fx.fixture_id, team, r, fx),
                        R=derive_red_card_state(fevents, fx.fixture_id, team, r, fx),
                    )
                )
    return BlockPanel.from_rows(rows)


def extract_chances(events: Sequence[EventRecord], fixtures: Sequence[Fixture]) -> list[ChanceObservation]:
    """One :class:`ChanceObservation` per goal or chance event.

    Events missing a location or assist player are skipped with a warning, as
    are assists credited to a player who appears for the opponent in the same
    fixture but never for the event's team (cross-team assists are assumed
    away by the model).
    """
    _, grouped = _index_fixtures(events, fixtures)
    out = []
    incomplete = cross_team = 0
    for fx in fixtures:
        fevents = grouped.get(fx.fixture_id, [])
        appears: dict[str, set[str]] = defaultdict(set)
        for ev in fevents:
            if ev.event_player is not None:
                appears[ev.event_player].add(ev.team_id)
        for ev in fevents:
            if not ev.is_chance:
                continue
            if not ev.is_complete_chance:
                incomplete += 1
                continue
            seen = appears.get(ev.assist_player, set())
            if seen and ev.team_id not in seen:
                cross_team += 1
                continue
            a, c = ev.assist_loc, ev.chance_loc
            out.append(
                ChanceObservation(
                    fixture_id=ev.fixture_id,
                    team_id=ev.team_id,
                    block=ev.block,
                    assist_player=PlayerKey(ev.assist_player, ev.team_id),
                    chance_player=PlayerKey(ev.event_player, ev.team_id),
                    assist_loc=a,
                    delta=DeltaLocation(c.x - a.x, c.y - a.y),
                )
            )
    if incomplete:
        warnings.warn(f"{incomplete} chance events missing a location or assist player were excluded")
    if cross_team:
        warnings.warn(f"{cross_team} chance events with a cross-team assist were excluded")
    return out


# ---------------------------------------------------------------------------
# table output


def chance_records(chances: Iterable[ChanceObservation]) -> list[dict]:
    return [
        {
            "fixture_id": c.fixture_id,
            "team_id": c.team_id,
            "block": c.block,
            "assist_player": c.assist_player.player_id,
            "chance_player": c.chance_player.player_id,
            "assist_x": c.assist_loc.x,
            "assist_y": c.assist_loc.y,
            "delta_x": c.delta.dx,
            "delta_y": c.delta.dy,
        }
        for c in chances
    ]


def chances_from_records(records: Iterable[Mapping]) -> list[ChanceObservation]:
    out = []
    for r in records:
        team = str(r["team_id"])
        out.append(
            ChanceObservation(
                fixture_id=str(r["fixture_id"]),
                team_id=team,
                block=int(r["block"]),
                assist_player=PlayerKey(str(r["assist_player"]), team),
                chance_player=PlayerKey(str(r["chance_player"]), team),
                assist_loc=PitchLocation(float(r["assist_x"]), float(r["assist_y"])),
                delta=DeltaLocation(float(r["delta_x"]), float(r["delta_y"])),
            )
        )
    return out


def panel_from_records(records: Iterable[Mapping]) -> BlockPanel:
    def as_bool(v):
        return v if isinstance(v, bool) else str(v).lower() in ("true", "1")

    return BlockPanel.from_rows(
        PanelRow(
            str(r["fixture_id"]),
            str(r["team_id"]),
            str(r["opponent_id"]),
            int(r["block"]),
            as_bool(r["is_home"]),
            int(r["N"]),
            int(r["G"]),
            int(r["R"]),
        )
        for r in records
    )


def write_records(records: Sequence[Mapping], fh: IO[str], fmt: str = "csv") -> None:
    """Write flat records as CSV or as line-delimited JSON."""
    if fmt == "jsonl":
        for rec in records:
            fh.write(json.dumps(rec, default=_json_default) + "\n")
    elif fmt == "csv":
        if not records:
            return
        writer = csv.DictWriter(fh, fieldnames=list(records[0]), lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in rec.items()})
    else:
        raise DomainError(f"unsupported table format {fmt!r}")


def read_records(fh: IO[str], fmt: str = "csv") -> list[dict]:
    if fmt == "jsonl":
        return [json.loads(line) for line in fh if line.strip()]
    if fmt == "csv":
        return list(csv.DictReader(fh))
    raise DomainError(f"unsupported table format {fmt!r}")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (dt.date,)):
        return obj.isoformat()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


@dataclass
class IngestResult:
    events: EventList
    fixtures: list[Fixture]
    panel: BlockPanel
    chances: list[ChanceObservation] = field(default_factory=list)


def ingest(events_src, fixtures_src, schema: Mapping[str, str] | None = None) -> IngestResult:
    """Parse events and fixtures and derive the panel and chance list in one call."""
    events = parse_events(events_src, schema)
    fixtures = parse_fixtures(fixtures_src)
    chances = extract_chances(events, fixtures)
    return IngestResult(events, fixtures, build_block_panel(events, fixtures), chances)
