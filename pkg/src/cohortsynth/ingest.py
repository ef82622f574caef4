"""Tweet-stream ingestion: NDJSON archives in, one attribute row per user out.

Archives are newline-delimited Twitter v1.1 tweet objects, optionally gzip
compressed. Each tweet embeds a snapshot of its author's profile; the newest
snapshot of every user is kept and encoded numerically.
"""

from __future__ import annotations

import gzip
import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .table import CANONICAL_COLUMNS, FeatureMatrix

log = logging.getLogger(__name__)

TWITTER_TIME_FORMAT = "%a %b %d %H:%M:%S %z %Y"
_GZIP_MAGIC = b"\x1f\x8b"
_COUNT_FIELDS = (
    "followers_count",
    "friends_count",
    "listed_count",
    "favourites_count",
    "statuses_count",
)


class IngestError(RuntimeError):
    """The source could not be read at all."""


class EncodingError(ValueError):
    """A record cannot be encoded against the requested snapshot date."""


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    has_location: bool
    protected: bool
    verified: bool
    followers_count: int
    friends_count: int
    listed_count: int
    favourites_count: int
    statuses_count: int
    created_at: datetime
    geo_enabled: bool
    default_profile: bool
    default_profile_image: bool
    observed_at: datetime


@dataclass
class IngestReport:
    total: int = 0
    parsed: int = 0
    skipped: int = 0
    distinct_users: int = 0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "parsed": self.parsed,
            "skipped": self.skipped,
            "distinct_users": self.distinct_users,
        }


@dataclass
class AttributeTable:
    """Deduplicated users encoded against ``snapshot_date``, sorted by user id."""

    rows: list[UserRecord]
    snapshot_date: date | None
    column_names: tuple[str, ...] = field(default=("user_id",) + CANONICAL_COLUMNS)

    def __len__(self) -> int:
        return len(self.rows)

    def to_matrix(self) -> FeatureMatrix:
        values = np.array(
            [encode_attributes(r, self.snapshot_date) for r in self.rows], dtype=float
        ).reshape(len(self.rows), len(CANONICAL_COLUMNS))
        return FeatureMatrix(values, CANONICAL_COLUMNS, tuple(r.user_id for r in self.rows))

    def to_csv(self) -> str:
        lines = [",".join(self.column_names)]
        for r in self.rows:
            vec = encode_attributes(r, self.snapshot_date)
            lines.append(",".join([_csv_field(r.user_id)] + [str(int(v)) for v in vec]))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))


def _csv_field(text: str) -> str:
    if any(c in text for c in ',"\n\r'):
        return '"' + text.replace('"', '""') + '"'
    return text


def parse_twitter_time(text: str) -> datetime:
    return datetime.strptime(text, TWITTER_TIME_FORMAT).astimezone(timezone.utc)


def _count(user: dict, name: str) -> int:
    value = user[name]
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ValueError(f"bad {name}: {value!r}")
    return value


def _flag(user: dict, name: str) -> bool:
    value = user.get(name, False)
    if value is None:
        return False
    if not isinstance(value, bool):
        raise ValueError(f"bad {name}: {value!r}")
    return value


def _observed_at(tweet: dict) -> datetime:
    if "created_at" in tweet:
        return parse_twitter_time(tweet["created_at"])
    return datetime.fromtimestamp(int(tweet["timestamp_ms"]) / 1000, tz=timezone.utc)


def parse_tweet_line(line: str | bytes) -> UserRecord | None:
    """Build a :class:`UserRecord` from one tweet line.

    Returns None for delete notices, objects without a user, and anything
    malformed; this function never raises on bad input.
    """
    try:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        tweet = json.loads(line)
        if not isinstance(tweet, dict) or "delete" in tweet:
            return None
        user = tweet.get("user")
        if not isinstance(user, dict):
            return None
        user_id = user.get("id_str") or (str(user["id"]) if "id" in user else "")
        if not isinstance(user_id, str) or not user_id:
            return None
        location = user.get("location")
        record = UserRecord(
            user_id=user_id,
            has_location=isinstance(location, str) and bool(location.strip()),
            protected=_flag(user, "protected"),
            verified=_flag(user, "verified"),
            **{name: _count(user, name) for name in _COUNT_FIELDS},
            created_at=parse_twitter_time(user["created_at"]),
            geo_enabled=_flag(user, "geo_enabled"),
            default_profile=_flag(user, "default_profile"),
            default_profile_image=_flag(user, "default_profile_image"),
            observed_at=_observed_at(tweet),
        )
    except (ValueError, KeyError, TypeError, OverflowError, UnicodeDecodeError):
        return None
    if record.created_at > record.observed_at:
        return None
    return record


def encode_attributes(record: UserRecord, snapshot_date: date) -> np.ndarray:
    """Encode a record in canonical column order.

    Flags become 0/1, counts pass through, and ``created_at`` becomes the
    account age in whole days at ``snapshot_date``.
    """
    created = record.created_at.astimezone(timezone.utc).date()
    if created > snapshot_date:
        raise EncodingError(
            f"user {record.user_id}: created_at {created} is after snapshot {snapshot_date}"
        )
    age = (snapshot_date - created).days
    return np.array(
        [
            record.has_location,
            record.protected,
            record.verified,
            record.followers_count,
            record.friends_count,
            record.listed_count,
            record.favourites_count,
            record.statuses_count,
            age,
            record.geo_enabled,
            record.default_profile,
            record.default_profile_image,
        ],
        dtype=float,
    )


def _recency_key(r: UserRecord) -> tuple:
    # Newest observation wins; the tail only makes ties deterministic.
    return (
        r.observed_at,
        r.statuses_count,
        r.user_id,
        r.followers_count,
        r.friends_count,
        r.listed_count,
        r.favourites_count,
        r.created_at,
        r.has_location,
        r.protected,
        r.verified,
        r.geo_enabled,
        r.default_profile,
        r.default_profile_image,
    )


def merge_records(records: Iterable[UserRecord]) -> list[UserRecord]:
    """Keep the most recent record of every user, sorted by user id.

    The result does not depend on the order of ``records``, so shards can be
    parsed independently and merged afterwards.
    """
    latest: dict[str, UserRecord] = {}
    for r in records:
        cur = latest.get(r.user_id)
        if cur is None or _recency_key(r) > _recency_key(cur):
            latest[r.user_id] = r
    return [latest[uid] for uid in sorted(latest)]


def _binary_stream(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(bytes(source))
    elif isinstance(source, (str, Path)):
        try:
            source = open(source, "rb")
        except OSError as exc:
            raise IngestError(f"cannot open {source}: {exc}") from exc
    try:
        if source.seekable():
            pos = source.tell()
            head = source.read(2)
            source.seek(pos)
        else:
            source = io.BytesIO(source.read())
            head = source.getvalue()[:2]
    except OSError as exc:
        raise IngestError(f"cannot read source: {exc}") from exc
    if head == _GZIP_MAGIC:
        return gzip.GzipFile(fileobj=source, mode="rb")
    return source


def iter_lines(source) -> Iterator[bytes]:
    stream = _binary_stream(source)
    try:
        for line in stream:
            yield line
    except (OSError, EOFError, gzip.BadGzipFile) as exc:
        raise IngestError(f"cannot read source: {exc}") from exc


def ingest_sources(
    sources: Sequence, snapshot_date: date | None = None
) -> tuple[AttributeTable, IngestReport]:
    """Ingest several archives (paths, byte strings or binary streams) as one population.

    ``snapshot_date`` defaults to the latest observation date in the data.
    """
    report = IngestReport()
    records = []
    for source in sources:
        for raw in iter_lines(source):
            report.total += 1
            rec = parse_tweet_line(raw)
            if rec is None:
                report.skipped += 1
            else:
                report.parsed += 1
                records.append(rec)
    rows = merge_records(records)
    report.distinct_users = len(rows)
    if snapshot_date is None:
        snapshot_date = max(r.observed_at for r in rows).date() if rows else None
    for r in rows:
        if r.created_at.astimezone(timezone.utc).date() > snapshot_date:
            raise EncodingError(
                f"user {r.user_id}: created_at {r.created_at.date()} is after snapshot {snapshot_date}"
            )
    log.info(
        "ingested %d lines: %d parsed, %d skipped, %d users",
        report.total, report.parsed, report.skipped, report.distinct_users,
    )
    return AttributeTable(rows, snapshot_date), report


def ingest_stream(source, snapshot_date: date | None = None) -> tuple[AttributeTable, IngestReport]:
    return ingest_sources([source], snapshot_date)
