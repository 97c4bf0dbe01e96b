"""Shared domain types, timestamp handling and JSONL persistence."""

from __future__ import annotations

import dataclasses
import json
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

NO_LABEL = "NO LABEL"

DEFAULT_TIME_FORMATS: tuple[str, ...] = (
    "iso8601",
    "unix_ns",
    "unix_us",
    "unix_ms",
    "unix_s",
    "%d-%b-%Y %H:%M:%S.%f",
    "%Y-%m-%d %H:%M:%S.%f",
    "%Y-%m-%d %H:%M:%S",
    "%b %d %Y %H:%M:%S",
)

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_ISO_RE = re.compile(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}:?\d{2})?$")
_UNIX_RE = {
    "unix_s": re.compile(r"^\d{9,10}(\.\d{1,9})?$"),
    "unix_ms": re.compile(r"^\d{13}$"),
    "unix_us": re.compile(r"^\d{16}$"),
    "unix_ns": re.compile(r"^\d{19}$"),
}


class PersistenceError(Exception):
    """Raised for unreadable or malformed JSONL artifacts."""

    def __init__(self, path: Path | str, cause: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        self.cause = cause
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {cause}")


@dataclass(frozen=True)
class Timestamp:
    raw: str
    epoch_micros: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"raw": self.raw, "epoch_micros": self.epoch_micros}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Timestamp":
        return cls(raw=d["raw"], epoch_micros=d.get("epoch_micros"))


def _to_micros(dt: datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - _EPOCH
    return (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds


def _parse_one(raw: str, fmt: str) -> int | None:
    if fmt == "iso8601":
        if not _ISO_RE.match(raw):
            return None
        text = raw.replace("Z", "+00:00")
        # fromisoformat in 3.10 accepts at most 6 fractional digits
        text = re.sub(r"(\.\d{6})\d+", r"\1", text)
        try:
            return _to_micros(datetime.fromisoformat(text))
        except ValueError:
            return None
    if fmt in _UNIX_RE:
        if not _UNIX_RE[fmt].match(raw):
            return None
        if fmt == "unix_s":
            whole, _, frac = raw.partition(".")
            return int(whole) * 1_000_000 + int((frac + "000000")[:6])
        scale = {"unix_ms": 1_000, "unix_us": 1, "unix_ns": None}[fmt]
        return int(raw) // 1_000 if scale is None else int(raw) * scale
    try:
        return _to_micros(datetime.strptime(raw, fmt))
    except ValueError:
        return None


def parse_timestamp(raw: str, formats: Sequence[str] = DEFAULT_TIME_FORMATS) -> Timestamp:
    """Parse ``raw`` with the first matching format; ``raw`` is always kept verbatim.

    Format descriptors are ``iso8601``, ``unix_s``, ``unix_ms``, ``unix_us``,
    ``unix_ns`` or any ``strptime`` pattern (naive values are read as UTC).
    """
    if not formats:
        raise ValueError("at least one timestamp format is required")
    text = raw.strip()
    for fmt in formats:
        micros = _parse_one(text, fmt)
        if micros is not None:
            return Timestamp(raw=raw, epoch_micros=micros)
    return Timestamp(raw=raw)


@dataclass(frozen=True)
class LogRecord:
    log_id: str
    raw_text: str
    arrival_seq: int
    window_id: int = 0
    source_tag: str | None = None

    def __post_init__(self) -> None:
        if not self.raw_text.strip():
            raise ValueError(f"log {self.log_id} has empty text")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LogRecord":
        return cls(**d)


@dataclass(frozen=True)
class Origin:
    """Where a provenance record came from: the LLM extractor or a rule."""

    kind: str  # "CPE" or "Rule"
    rule_id: str | None = None

    def __str__(self) -> str:
        return self.kind if self.rule_id is None else f"Rule({self.rule_id})"

    @classmethod
    def parse(cls, text: str) -> "Origin":
        if text == "CPE":
            return CPE_ORIGIN
        m = re.fullmatch(r"Rule\((.+)\)", text)
        if not m:
            raise ValueError(f"bad origin {text!r}")
        return cls("Rule", m.group(1))


CPE_ORIGIN = Origin("CPE")


@dataclass(frozen=True)
class ProvenanceRecord:
    sid: str
    did: str
    itype: str
    source_log_id: str
    stype: str | None = None
    sname: str | None = None
    dtype: str | None = None
    dname: str | None = None
    time: Timestamp | None = None
    origin: Origin = CPE_ORIGIN
    # arrival_seq of the source log; used for temporal tie-breaking downstream
    seq: int = 0

    def __post_init__(self) -> None:
        if not self.sid or not self.did:
            raise ValueError("provenance record needs non-empty sid and did")
        if not self.itype:
            raise ValueError("provenance record needs a non-empty itype")

    def fields(self) -> dict[str, str | None]:
        """The eight extracted fields, with time reduced to its raw text."""
        return {
            "sid": self.sid,
            "stype": self.stype,
            "sname": self.sname,
            "did": self.did,
            "dtype": self.dtype,
            "dname": self.dname,
            "itype": self.itype,
            "time": self.time.raw if self.time else None,
        }

    def key(self) -> tuple[str | None, ...]:
        return tuple(self.fields().values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "sid": self.sid,
            "stype": self.stype,
            "sname": self.sname,
            "did": self.did,
            "dtype": self.dtype,
            "dname": self.dname,
            "itype": self.itype,
            "time": self.time.to_dict() if self.time else None,
            "origin": str(self.origin),
            "source_log_id": self.source_log_id,
            "seq": self.seq,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ProvenanceRecord":
        return cls(
            sid=d["sid"],
            did=d["did"],
            itype=d["itype"],
            source_log_id=d["source_log_id"],
            stype=d.get("stype"),
            sname=d.get("sname"),
            dtype=d.get("dtype"),
            dname=d.get("dname"),
            time=Timestamp.from_dict(d["time"]) if d.get("time") else None,
            origin=Origin.parse(d.get("origin", "CPE")),
            seq=d.get("seq", 0),
        )


def is_endpoint(value: str) -> bool:
    """True for ``IP:port`` style network endpoints."""
    return bool(re.fullmatch(r"(\d{1,3}(\.\d{1,3}){3}|\[[0-9A-Fa-f:]+\]):\d{1,5}", value))


# --- persistence -----------------------------------------------------------


@dataclass
class SkipEntry:
    log_id: str
    stage: str
    cause: str

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class SkipReport:
    entries: list[SkipEntry] = field(default_factory=list)

    def add(self, log_id: str, stage: str, cause: str) -> None:
        self.entries.append(SkipEntry(log_id, stage, cause))

    def __len__(self) -> int:
        return len(self.entries)


def _encode(obj: Any) -> Any:
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def atomic_write_text(path: Path | str, text: str) -> None:
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(records: Iterable[Any]) -> str:
    return "".join(
        json.dumps(_encode(r), ensure_ascii=False, sort_keys=True) + "\n" for r in records
    )


def write_jsonl(path: Path | str, records: Iterable[Any]) -> int:
    """Atomically write one JSON object per line. Returns the record count."""
    items = list(records)
    try:
        atomic_write_text(path, dumps_jsonl(items))
    except OSError as exc:
        raise PersistenceError(path, f"write failed: {exc.strerror or exc}") from exc
    return len(items)


def iter_jsonl(path: Path | str) -> Iterator[dict[str, Any]]:
    for _, obj in _numbered_jsonl(path):
        yield obj


def _numbered_jsonl(path: Path | str) -> Iterator[tuple[int, dict[str, Any]]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(path, f"read failed: {exc.strerror or exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PersistenceError(path, f"malformed JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise PersistenceError(path, "expected a JSON object", line=lineno)
            yield lineno, obj


def read_jsonl(path: Path | str, cls: Any = None) -> list[Any]:
    """Read a JSONL file; with ``cls`` each object is rebuilt via ``cls.from_dict``."""
    out = []
    for lineno, obj in _numbered_jsonl(path):
        if cls is None:
            out.append(obj)
            continue
        try:
            out.append(cls.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise PersistenceError(path, f"invalid {cls.__name__}: {exc}", line=lineno) from exc
    return out


def read_log_file(
    path: Path | str,
    *,
    start_seq: int = 0,
    window_size: int = 1000,
    source_tag: str | None = None,
) -> list[LogRecord]:
    """Load a plain-text log, one entry per line; ids are ``<stem>:<lineno>``."""
    path = Path(path)
    records = []
    seq = start_seq
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.rstrip("\n")
            if not text.strip():
                continue
            records.append(
                LogRecord(
                    log_id=f"{path.stem}:{lineno}",
                    raw_text=text,
                    arrival_seq=seq,
                    window_id=seq // window_size,
                    source_tag=source_tag,
                )
            )
            seq += 1
    return records
