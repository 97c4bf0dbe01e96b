"""Synthetic multi-format log corpora with ground truth and matching stub scripts.

Every generated line carries its log type, the provenance record a perfect
parser would extract, and the functional class of both entities. The stub
script answers every prompt the pipeline sends for these lines, so the whole
LLM-dependent path runs offline and deterministically.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable

from .core import atomic_write_text
from .llm.providers import ScriptedResponder, ScriptRule
from .names import normalize_entity_name

# --- entity vocabulary -----------------------------------------------------------

OFFICE = "C:\\Program Files\\Microsoft Office\\root\\Office16\\"
SYS32 = "C:\\Windows\\System32\\"
DOCS = "C:\\Users\\alice\\Documents\\"
TEMP = "C:\\Users\\alice\\AppData\\Local\\Temp\\"

# class -> (functional label, entity names)
CLASSES: dict[str, tuple[str, list[str]]] = {
    "win_browser": ("web browser", [
        "C:\\Program Files\\Mozilla Firefox\\firefox.exe",
        "C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe",
        "C:\\Program Files (x86)\\Microsoft\\Edge\\Application\\msedge.exe",
    ]),
    "editor": ("document editor", [OFFICE + "WINWORD.EXE", OFFICE + "EXCEL.EXE", OFFICE + "POWERPNT.EXE"]),
    "win_shell": ("command-line shell", [SYS32 + "cmd.exe", SYS32 + "WindowsPowerShell\\v1.0\\powershell.exe"]),
    "utility": ("system utility", [SYS32 + n for n in
                                   ("whoami.exe", "ipconfig.exe", "tasklist.exe", "netstat.exe", "systeminfo.exe",
                                    "hostname.exe")]),
    "sync": ("cloud sync client", [
        "C:\\Users\\alice\\AppData\\Local\\Microsoft\\OneDrive\\OneDrive.exe",
        "C:\\Program Files (x86)\\Dropbox\\Client\\Dropbox.exe",
    ]),
    "indexer": ("search indexer", [SYS32 + "SearchIndexer.exe", SYS32 + "SearchProtocolHost.exe"]),
    "explorer": ("file manager", ["C:\\Windows\\explorer.exe"]),
    "svchost": ("service host", [SYS32 + "svchost.exe", SYS32 + "spoolsv.exe"]),
    "document": ("office document", [DOCS + n for n in
                                      ("budget.xlsx", "report.docx", "notes.docx", "roadmap.pptx",
                                       "expenses.xlsx", "minutes.docx", "contacts.xlsx", "review.pptx")]),
    "win_config": ("configuration file", [
        SYS32 + "drivers\\etc\\hosts", "C:\\Windows\\win.ini", "C:\\Windows\\system.ini",
        SYS32 + "config\\systemprofile\\AppData\\Local\\settings.dat",
    ]),
    "lin_browser": ("web browser", ["/usr/lib/firefox/firefox"]),
    "mail": ("email client", ["/usr/lib/thunderbird/thunderbird"]),
    "ffprofile": ("browser profile data", [
        "/home/admin/.mozilla/firefox/default/" + n
        for n in ("prefs.js", "places.sqlite", "cookies.sqlite", "sessionstore.jsonlz", "formhistory.sqlite")]),
    "tbprofile": ("mail profile data", [
        "/home/admin/.thunderbird/default/" + n for n in ("prefs.js", "abook.mab", "Inbox.msf")]),
    "logger": ("logging daemon", ["/usr/sbin/rsyslogd"]),
    "logfile": ("system log file", ["/var/log/syslog", "/var/log/auth.log", "/var/log/kern.log", "/var/log/daemon.log"]),
    "lin_shell": ("command-line shell", ["/bin/bash", "/bin/sh", "/usr/bin/zsh"]),
    "interp": ("script interpreter", ["/usr/bin/python3", "/usr/bin/perl"]),
    "cron": ("job scheduler", ["/usr/sbin/cron"]),
    "lin_config": ("configuration file", ["/etc/passwd", "/etc/hosts", "/etc/crontab", "/etc/bash.bashrc",
                                          "/etc/resolv.conf", "/etc/environment"]),
    "domain": ("web domain", ["www.wikipedia.org", "mail.example.org", "news.ycombinator.com", "www.example.com",
                              "login.microsoftonline.com", "archive.ubuntu.com", "www.github.com"]),
    "page": ("web page", ["https://www.wikipedia.org/wiki/Main_Page", "https://www.example.com/index.html",
                          "https://news.ycombinator.com/news", "https://www.github.com/explore",
                          "https://login.microsoftonline.com/common/oauth", "https://mail.example.org/inbox"]),
    "host": (None, ["10.0.0.5:49152", "10.0.0.6:49152", "10.0.0.7:49152", "10.0.0.8:49152"]),
}

# attack entities: (name, functional label, attack id)
ATTACK_ENTITIES: dict[str, tuple[str, str, str]] = {
    "a_script": (TEMP + "invoice_view.js", "malicious script", "A1"),
    "a_payload": (TEMP + "updater.exe", "malicious payload", "A1"),
    "a_url": ("http://cdn.update-service.net/stage.bin", "malware staging url", "A1"),
    "a_creds": (DOCS + "passwords.xlsx", "credential spreadsheet", "A1"),
    "a_archive": (TEMP + "backup_archive.zip", "exfiltration archive", "A1"),
    "b_masq": ("C:\\ProgramData\\Microsoft\\svchost.exe", "masquerading process", "A2"),
}


def _hexid(name: str, n: int) -> str:
    return hashlib.sha1(name.encode()).hexdigest()[:n]


def _num(name: str, lo: int, hi: int) -> int:
    return lo + int(_hexid(name, 8), 16) % (hi - lo)


# --- formats -------------------------------------------------------------------


@dataclass
class Event:
    src: str
    dst: str
    itype: str
    time: datetime


@dataclass
class LogFormat:
    name: str
    platform: str
    render: Callable[[Event, random.Random], str]
    fields: Callable[[Event, str], dict[str, str | None]]
    line_re: str           # full-line regex with named groups
    anchor: str            # start-of-line regex unique to the format
    p1: str                # expand templates over line_re groups
    p2: str
    p3: str
    p5: dict[str, str]     # field -> P5 answer (pattern, optional "Token:" line)


def _iso_ms(t: datetime) -> str:
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}Z"


def _space_ms(t: datetime) -> str:
    return t.strftime("%Y-%m-%d %H:%M:%S.") + f"{t.microsecond // 1000:03d}"


def _theia(e: Event, rng: random.Random) -> str:
    return (
        f'{{"ts":"{_iso_ms(e.time)}","event":"{e.itype}",'
        f'"subject":{{"uuid":"{_uuid(e.src)}","type":"SUBJECT_PROCESS","path":"{e.src}"}},'
        f'"object":{{"uuid":"{_uuid(e.dst)}","type":"FILE_OBJECT_FILE","path":"{e.dst}"}},'
        f'"hostId":"83c8ed1f-5045-dbcd-b39f-918f0df4f851","source":"SOURCE_LINUX_THEIA"}}'
    )


WIN_MASKS = {"ReadData": "1", "WriteData": "2"}


def _uuid(name: str) -> str:
    h = _hexid(name, 12)
    return f"{h[:8]}-{h[8:]}"


def _winaudit(e: Event, rng: random.Random) -> str:
    return (
        f"{_space_ms(e.time)} EventID=4663 Channel=Security Provider=Microsoft-Windows-Security-Auditing "
        f"Keywords=AuditSuccess SubjectUserName=alice SubjectDomainName=CORP ProcessId=0x{_hexid(e.src, 4)} "
        f"ProcessName={e.src} HandleId=0x{_hexid(e.dst, 4)} ObjectServer=Security ObjectType=FileObject "
        f"ObjectName={e.dst} Accesses={e.itype} AccessMask=0x{WIN_MASKS.get(e.itype, '1')} Task=FileSystem"
    )


def _auditd(e: Event, rng: random.Random) -> str:
    stamp = f"{int(e.time.timestamp())}.{e.time.microsecond // 1000:03d}"
    return (
        f"type=SYSCALL msg=audit({stamp}:{rng.randint(1000, 99999)}): arch=c000003e syscall={e.itype} "
        f"success=yes exit=3 ppid=1 pid={_num(e.src, 300, 30000)} auid=1000 uid=1000 gid=1000 euid=1000 "
        f"tty=pts0 ses=2 exe=\"{e.src}\" inode={_num(e.dst, 100000, 999999)} name=\"{e.dst}\" "
        f"key=\"provenance\""
    )


def _dns(e: Event, rng: random.Random) -> str:
    stamp = e.time.strftime("%d-%b-%Y %H:%M:%S.") + f"{e.time.microsecond // 1000:03d}"
    return (f"{stamp} named[812]: queries: info: client @0x7f3a2c01 {e.src} view internal: "
            f"{e.itype} {e.dst} IN A +E(0) (10.0.0.1)")


def _http(e: Event, rng: random.Random) -> str:
    return (
        f"[{_space_ms(e.time)}] [Parent, Socket Thread] D/nsHttp pid={_num(e.src, 300, 30000)} "
        f"exe=\"{e.src}\" request {e.itype} {e.dst} HTTP/1.1 status=200 Accept-Encoding: gzip, deflate, br "
        f"Connection: keep-alive"
    )


def _csv(e: Event, rng: random.Random) -> str:
    return (f"{_iso_ms(e.time)},{e.itype},{_num(e.src, 300, 30000)},{e.src},{_num(e.dst, 300, 30000)},{e.dst},"
            f"CORP\\alice,Medium,WKS-FIN-07,Microsoft-Windows-Sysmon,0x0,ProcessCreate")


def _rec(sid, stype, sname, did, dtype, dname, itype, time) -> dict[str, str | None]:
    return {"sid": sid, "stype": stype, "sname": sname, "did": did, "dtype": dtype, "dname": dname,
            "itype": itype, "time": time}


def _p4_line() -> str:
    return r"(\g<sid>, \g<did>)  A: [\g<itype>] {D=->} (timestamp=\g<ts>)"


FORMATS: dict[str, LogFormat] = {
    "theia": LogFormat(
        "theia", "THEIA",
        _theia,
        lambda e, line: _rec(_uuid(e.src), "SUBJECT_PROCESS", e.src, _uuid(e.dst), "FILE_OBJECT_FILE", e.dst,
                             e.itype, _iso_ms(e.time)),
        r'^\{"ts":"(?P<ts>[^"]+)","event":"(?P<itype>[A-Z_]+)","subject":\{"uuid":"(?P<sid>[0-9a-f-]+)",'
        r'"type":"(?P<stype>[A-Z_]+)","path":"(?P<sname>[^"]+)"\},"object":\{"uuid":"(?P<did>[0-9a-f-]+)",'
        r'"type":"(?P<dtype>[A-Z_]+)","path":"(?P<dname>[^"]+)"\},"hostId":"[0-9a-f-]+","source":"\w+"\}$',
        r'\{"ts":',
        r'The process "\g<sname>" (\g<sid>) [\g<stype>] performs {\g<itype>} on the file "\g<dname>" '
        r'(\g<did>) [\g<dtype>] at \g<ts>.',
        '"\\g<sid>" = "\\g<stype>"\n\n"\\g<did>" = "\\g<dtype>"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<sid>" = "\\g<sname>"\n\n"\\g<did>" = "\\g<dname>"',
        {
            "sid": r'"subject":\{"uuid":"([0-9a-f-]+)"',
            "stype": r'"subject":\{[^}]*"type":"([A-Z_]+)"',
            "sname": r'"subject":\{[^}]*"path":"([^"]+)"',
            "did": r'"object":\{"uuid":"([0-9a-f-]+)"',
            "dtype": r'"object":\{[^}]*"type":"([A-Z_]+)"',
            "dname": r'"object":\{[^}]*"path":"([^"]+)"',
            "itype": r'"event":"([A-Z_]+)"',
            "time": r'^\{"ts":"([0-9T:.Z-]+)"',
        },
    ),
    "winaudit": LogFormat(
        "winaudit", "Windows security auditing",
        _winaudit,
        lambda e, line: _rec("0x" + _hexid(e.src, 4), None, e.src, "0x" + _hexid(e.dst, 4), "file", e.dst,
                             e.itype, _space_ms(e.time)),
        r"^(?P<ts>\d{4}-\d{2}-\d{2} [0-9:.]+) EventID=4663 .*? ProcessId=(?P<sid>0x[0-9a-f]+) "
        r"ProcessName=(?P<sname>.+?) HandleId=(?P<did>0x[0-9a-f]+) ObjectServer=\w+ ObjectType=(?P<otype>\w+) "
        r"ObjectName=(?P<dname>.+?) Accesses=(?P<itype>\w+) AccessMask=\w+ Task=\w+$",
        r"\d{4}-\d{2}-\d{2} [0-9:.]+ EventID=",
        r'The process "\g<sname>" (\g<sid>) performs {\g<itype>} on the [file] "\g<dname>" (\g<did>) '
        r'at \g<ts>.',
        '"\\g<sid>" = "NONE"\n\n"\\g<did>" = "file"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<sid>" = "\\g<sname>"\n\n"\\g<did>" = "\\g<dname>"',
        {
            "sid": r"ProcessId=(0x[0-9a-f]+)",
            "sname": r"ProcessName=(.+?) HandleId=",
            "did": r"HandleId=(0x[0-9a-f]+)",
            "dtype": "ObjectType=([A-Za-z]+)\nToken: FileObject",
            "dname": r"ObjectName=(.+?) Accesses=",
            "itype": r"Accesses=([A-Za-z]+) AccessMask=",
            "time": r"^(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}\.\d+) EventID=",
        },
    ),
    "auditd": LogFormat(
        "auditd", "Linux auditd",
        _auditd,
        lambda e, line: _rec(line.split(" pid=")[1].split()[0], None, e.src,
                             line.split(" inode=")[1].split()[0], None, e.dst, e.itype,
                             line.split("msg=audit(")[1].split(":")[0]),
        r"^type=SYSCALL msg=audit\((?P<ts>[0-9.]+):\d+\): arch=\w+ syscall=(?P<itype>\w+) success=yes "
        r"exit=\d+ ppid=\d+ pid=(?P<sid>\d+) .*? exe=\"(?P<sname>[^\"]+)\" inode=(?P<did>\d+) "
        r"name=\"(?P<dname>[^\"]+)\" key=\"\w+\"$",
        r"type=SYSCALL ",
        r'The process "\g<sname>" (\g<sid>) issues {\g<itype>} on "\g<dname>" (\g<did>) at \g<ts>.',
        '"\\g<sid>" = "NONE"\n\n"\\g<did>" = "NONE"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<sid>" = "\\g<sname>"\n\n"\\g<did>" = "\\g<dname>"',
        {
            "sid": r" pid=(\d+) auid=",
            "sname": r'exe="([^"]+)"',
            "did": r" inode=(\d+) ",
            "dname": r' name="([^"]+)" key=',
            "itype": r" syscall=([a-z0-9_]+) ",
            "time": r"msg=audit\((\d+\.\d+):",
        },
    ),
    "dns": LogFormat(
        "dns", "BIND DNS",
        _dns,
        lambda e, line: _rec(e.src, "source address", None, e.dst, None, e.dst, e.itype,
                             line.split(" named[")[0]),
        r"^(?P<ts>\d{2}-[A-Za-z]{3}-\d{4} [0-9:.]+) named\[\d+\]: queries: info: client @\w+ "
        r"(?P<sid>[0-9.]+:\d+) view \w+: (?P<itype>[a-z]+) (?P<did>[A-Za-z.-]+) IN A .*$",
        r"\d{2}-[A-Za-z]{3}-\d{4} [0-9:.]+ named",
        r'The host (\g<sid>) sends a DNS {\g<itype>} for the [domain] "\g<did>" (\g<did>) at \g<ts>.',
        '"\\g<sid>" = "source address"\n\n"\\g<did>" = "NONE"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<did>" = "\\g<did>"',
        {
            "sid": r"client @\w+ (\d+\.\d+\.\d+\.\d+:\d+) ",
            "did": r" [a-z]+ ([A-Za-z.-]+) IN A",
            "dname": r" [a-z]+ ([A-Za-z.-]+) IN A",
            "itype": r" view \w+: ([a-z]+) ",
            "time": r"^(\d{2}-[A-Za-z]{3}-\d{4} \d{2}:\d{2}:\d{2}\.\d+) named",
        },
    ),
    "http": LogFormat(
        "http", "Firefox HTTP",
        _http,
        lambda e, line: _rec(line.split(" pid=")[1].split()[0], None, e.src, e.dst, None, e.dst, e.itype,
                             _space_ms(e.time)),
        r"^\[(?P<ts>[0-9 :.-]+)\] \[Parent, Socket Thread\] D/nsHttp pid=(?P<sid>\d+) exe=\"(?P<sname>[^\"]+)\" "
        r"request (?P<itype>[A-Z]+) (?P<did>\S+) HTTP/1\.1 status=\d+ .*$",
        r"\[[0-9 :.-]+\] \[Parent",
        r'The process "\g<sname>" (\g<sid>) sends an HTTP {\g<itype>} request for the [url] "\g<did>" '
        r'(\g<did>) at \g<ts>.',
        '"\\g<sid>" = "NONE"\n\n"\\g<did>" = "NONE"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<sid>" = "\\g<sname>"\n\n"\\g<did>" = "\\g<did>"',
        {
            "sid": r"D/nsHttp pid=(\d+) ",
            "sname": r'exe="([^"]+)" request',
            "did": r"request [A-Z]+ (\S+) HTTP/",
            "dname": r"request [A-Z]+ (\S+) HTTP/",
            "itype": r" request ([A-Z]+) ",
            "time": r"^\[(\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}\.\d+)\] \[Parent",
        },
    ),
    "proccsv": LogFormat(
        "proccsv", "process creation CSV",
        _csv,
        lambda e, line: _rec(line.split(",")[2], None, e.src, line.split(",")[4], None, e.dst, e.itype,
                             _iso_ms(e.time)),
        r"^(?P<ts>\d{4}-\d{2}-\d{2}T[0-9:.]+Z),(?P<itype>[A-Z_]+),(?P<sid>\d+),(?P<sname>[^,]+),"
        r"(?P<did>\d+),(?P<dname>[^,]+),[^,]*,\w+,[\w-]+,[\w-]+,0x\w+,\w+$",
        r"\d{4}-\d{2}-\d{2}T[0-9:.]+Z,",
        r'The process "\g<sname>" (\g<sid>) performs {\g<itype>} to start the process "\g<dname>" '
        r'(\g<did>) at \g<ts>.',
        '"\\g<sid>" = "NONE"\n\n"\\g<did>" = "NONE"',
        '[RELATED ENTITIES and IP ADDRESSES]\n\n(\\g<sid>, \\g<did>)  A: [\\g<itype>]\n\n[ENTITY NAMES]\n\n'
        '"\\g<sid>" = "\\g<sname>"\n\n"\\g<did>" = "\\g<dname>"',
        {
            "sid": r"^[^,]+,[A-Z_]+,(\d+),",
            "sname": r"^[^,]+,[A-Z_]+,\d+,([^,]+),",
            "did": r"^[^,]+,[A-Z_]+,\d+,[^,]+,(\d+),",
            "dname": r"^[^,]+,[A-Z_]+,\d+,[^,]+,\d+,([^,]+),",
            "itype": r"Z,([A-Z_]+),",
            "time": r"^(\d{4}-\d{2}-\d{2}T[0-9:.]+Z),",
        },
    ),
}

# (format, src class, dst class, interaction types, weight)
BENIGN_SCRIPT: list[tuple[str, str, str, tuple[str, ...], int]] = [
    ("theia", "lin_browser", "ffprofile", ("EVENT_READ", "EVENT_WRITE"), 4),
    ("theia", "mail", "tbprofile", ("EVENT_READ", "EVENT_WRITE"), 2),
    ("theia", "logger", "logfile", ("EVENT_WRITE",), 2),
    ("winaudit", "editor", "document", ("ReadData", "WriteData"), 4),
    ("winaudit", "sync", "document", ("ReadData",), 2),
    ("winaudit", "indexer", "document", ("ReadData",), 2),
    ("winaudit", "explorer", "document", ("ReadData",), 1),
    ("winaudit", "svchost", "win_config", ("ReadData",), 2),
    ("auditd", "lin_shell", "lin_config", ("openat", "read"), 3),
    ("auditd", "interp", "lin_config", ("openat", "read"), 1),
    ("auditd", "cron", "lin_config", ("openat",), 1),
    ("dns", "host", "domain", ("query",), 5),
    ("http", "win_browser", "page", ("GET", "POST"), 5),
    ("proccsv", "win_shell", "utility", ("PROC_CREATE",), 3),
    ("proccsv", "explorer", "editor", ("PROC_CREATE",), 1),
    ("proccsv", "explorer", "win_browser", ("PROC_CREATE",), 1),
    ("proccsv", "explorer", "win_shell", ("PROC_CREATE",), 1),
]

# (format, src, dst, itype, repetitions); src/dst are attack keys or "class:index"
ATTACK_SCRIPT: dict[str, list[tuple[str, str, str, str, int]]] = {
    "A1": [
        ("winaudit", "editor:0", "a_script", "WriteData", 1),
        ("proccsv", "win_shell:0", "a_payload", "PROC_CREATE", 1),
        ("winaudit", "a_payload", "a_script", "ReadData", 2),
        ("http", "a_payload", "a_url", "GET", 4),
        ("http", "win_browser:0", "a_url", "GET", 1),
        ("winaudit", "a_payload", "a_creds", "ReadData", 2),
        ("winaudit", "editor:1", "a_creds", "ReadData", 1),
        ("winaudit", "a_payload", "a_archive", "WriteData", 3),
        ("winaudit", "sync:0", "a_archive", "ReadData", 1),
    ],
    "A2": [
        ("proccsv", "win_shell:0", "b_masq", "PROC_CREATE", 1),
        ("http", "b_masq", "page:0", "GET", 2),
    ],
}

DEFAULT_FORMATS = tuple(FORMATS)


@dataclass
class CorpusSpec:
    seed: int = 0
    n_benign: int = 2000
    n_test: int = 1000
    formats: list[str] = field(default_factory=lambda: list(DEFAULT_FORMATS))
    attacks: list[str] = field(default_factory=lambda: ["A1", "A2"])
    start: str = "2019-04-10T14:00:00+00:00"

    def validate(self) -> None:
        if len(self.formats) < 2:
            raise ValueError("a corpus needs at least two formats")
        unknown = set(self.formats) - set(FORMATS)
        if unknown:
            raise ValueError(f"unknown formats: {sorted(unknown)}")
        bad = set(self.attacks) - set(ATTACK_SCRIPT)
        if bad:
            raise ValueError(f"unknown attacks: {sorted(bad)}")
        for att in self.attacks:
            needed = {fmt for fmt, *_ in ATTACK_SCRIPT[att]}
            if not needed <= set(self.formats):
                raise ValueError(f"attack {att} needs formats {sorted(needed)}")
        if self.n_benign < 0 or self.n_test < 0:
            raise ValueError("line counts must be >= 0")

    @classmethod
    def load(cls, path: Path | str) -> "CorpusSpec":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Line:
    text: str
    fmt: str
    record: dict[str, str | None]
    src_class: str
    dst_class: str
    attack: str | None = None


@dataclass
class Corpus:
    spec: CorpusSpec
    benign: list[Line]
    test: list[Line]

    def entity_labels(self) -> dict[str, str]:
        """Raw entity name -> functional label for every named entity."""
        out = {}
        for cls_name, (label, names) in CLASSES.items():
            if label is not None:
                for n in names:
                    out[n] = label
        for name, label, _ in ATTACK_ENTITIES.values():
            out[name] = label
        return out

    def attack_nodes(self) -> dict[str, str]:
        """Normalized node key -> attack id, for attacks present in the test stream."""
        out = {}
        for name, _, att in ATTACK_ENTITIES.values():
            if att in self.spec.attacks:
                out[normalize_entity_name(name)] = att
        return out


def _entity(ref: str) -> tuple[str, str]:
    """(name, class) for an attack-script reference."""
    if ref in ATTACK_ENTITIES:
        return ATTACK_ENTITIES[ref][0], ref
    cls_name, _, idx = ref.partition(":")
    return CLASSES[cls_name][1][int(idx)], cls_name


def _benign_events(spec: CorpusSpec, n: int, rng: random.Random) -> list[tuple[str, str, str, str, str, str]]:
    script = [s for s in BENIGN_SCRIPT if s[0] in spec.formats]
    weights = [w for *_, w in script]
    out = []
    # make sure every format shows up even in tiny corpora
    chosen = [script[i] for i in range(len(script)) if n > 0][: min(n, len(script))]
    while len(chosen) < n:
        chosen.append(rng.choices(script, weights)[0])
    for fmt, sc, dc, itypes, _ in chosen:
        out.append((fmt, rng.choice(CLASSES[sc][1]), sc, rng.choice(CLASSES[dc][1]), dc, rng.choice(itypes)))
    return out


def _render(items: list[tuple], start: datetime, rng: random.Random) -> tuple[list[Line], datetime]:
    lines = []
    t = start
    for fmt_name, src, sc, dst, dc, itype, attack in items:
        t = t + timedelta(milliseconds=rng.randint(1, 1500))
        fmt = FORMATS[fmt_name]
        ev = Event(src, dst, itype, t)
        text = fmt.render(ev, rng)
        lines.append(Line(text, fmt_name, fmt.fields(ev, text), sc, dc, attack))
    return lines, t


def generate(spec: CorpusSpec) -> Corpus:
    spec.validate()
    rng = random.Random(spec.seed)
    start = datetime.fromisoformat(spec.start).astimezone(timezone.utc)

    benign_items = [(*ev, None) for ev in _benign_events(spec, spec.n_benign, rng)]
    rng.shuffle(benign_items)
    benign, t = _render(benign_items, start, rng)

    test_items = [(*ev, None) for ev in _benign_events(spec, max(0, spec.n_test), rng)] if spec.n_test else []
    attack_items = []
    for att in spec.attacks if spec.n_test else []:
        for fmt, s, d, itype, reps in ATTACK_SCRIPT[att]:
            (sn, sc), (dn, dc) = _entity(s), _entity(d)
            attack_items += [(fmt, sn, sc, dn, dc, itype, att)] * reps
    # attacks unfold in order inside a quiet stretch of the test stream
    rng.shuffle(test_items)
    if attack_items:
        at = rng.randint(len(test_items) // 4, max(len(test_items) // 4, 3 * len(test_items) // 4))
        merged = []
        step = max(1, (len(test_items) - at) // (len(attack_items) + 1))
        pos = at
        attack_iter = iter(attack_items)
        for i, item in enumerate(test_items):
            merged.append(item)
            if i == pos:
                nxt = next(attack_iter, None)
                if nxt is not None:
                    merged.append(nxt)
                    pos += step
        merged += list(attack_iter)
        test_items = merged
    test, _ = _render(test_items, t + timedelta(minutes=10), rng)
    return Corpus(spec, benign, test)


# --- stub script --------------------------------------------------------------------

STUB_SUMMARY = (
    "Summary: A document editor wrote a script file into the user's temporary folder, after which a "
    "command-line shell started an unfamiliar executable from the same folder. That executable read the "
    "script, repeatedly requested a remote file from an external web address, read a spreadsheet holding "
    "passwords, and wrote an archive into the temporary folder that a cloud sync client later read. A second "
    "executable placed under the program data folder was started by the same shell and requested a web page."
)
STUB_TACTICS = (
    ("Execution", "The command-line shell starts the executable dropped into the temporary folder."),
    ("Credential Access", "The dropped executable reads the spreadsheet of passwords."),
    ("Command and Control", "The dropped executable repeatedly requests a file from an external address."),
    ("Exfiltration", "An archive written by the dropped executable is read by the cloud sync client."),
)


def stub_summary_response() -> str:
    parts = [STUB_SUMMARY, ""]
    for tactic, why in STUB_TACTICS:
        parts += [f"Stage: {tactic}", f"Reasoning: {why}", ""]
    return "\n".join(parts)


FIELD_LABELS = {"sid": "Sid", "did": "Did", "stype": "Stype", "dtype": "Dtype", "itype": "Itype", "time": "time",
                "sname": "Sname", "dname": "Dname"}


def stub_rules(formats: list[str] | tuple[str, ...] = DEFAULT_FORMATS,
               flipped_votes: tuple[int, ...] = (5, 6)) -> list[ScriptRule]:
    rules: list[ScriptRule] = []
    for name in formats:
        fmt = FORMATS[name]
        rules.append(ScriptRule(response=fmt.p1, template="P1", binding="log", pattern=fmt.line_re, expand=True))
        rules.append(ScriptRule(response=fmt.p2, template="P2", binding="log", pattern=fmt.line_re, expand=True))
        rules.append(ScriptRule(response=fmt.p3, template="P3", binding="log", pattern=fmt.line_re, expand=True))
        for v in flipped_votes:
            rules.append(ScriptRule(response=_p4_line().replace("D=->", "D=<-"), template="P4", vote=v,
                                    binding="log", pattern=fmt.line_re, expand=True))
        rules.append(ScriptRule(response=_p4_line(), template="P4", binding="log", pattern=fmt.line_re, expand=True))
        for fld, answer in fmt.p5.items():
            prompt_re = (r"\[LOG\]\n" + fmt.anchor + r".*?\n\n\[TASK\]\nTASK \d\n\n\[FIELD\]\n"
                         + FIELD_LABELS[fld] + r"\n")
            rules.append(ScriptRule(response=answer, template="P5", pattern=prompt_re))
    rules.append(ScriptRule(response="No Regex", template="P5"))
    labels = Corpus(CorpusSpec(), [], []).entity_labels()
    benign_names = {n for c, (lab, names) in CLASSES.items() for n in names}
    for raw, label in sorted(labels.items()):
        key = normalize_entity_name(raw)
        rules.append(ScriptRule(response=f"{key} | Type: {label}", template="P6", binding="entity", equals=key))
    rules.append(ScriptRule(response="entity | Type: NO LABEL", template="P6"))
    for raw in sorted(benign_names):
        rules.append(ScriptRule(response="YES", template="P7", binding="entity", equals=raw))
    rules.append(ScriptRule(response="NO", template="P7"))
    rules.append(ScriptRule(response=stub_summary_response(), template="P8"))
    rules.append(ScriptRule(response="YES", template="P9"))
    return rules


def stub_responder(formats: list[str] | tuple[str, ...] = DEFAULT_FORMATS) -> ScriptedResponder:
    return ScriptedResponder(stub_rules(formats))


# --- output ----------------------------------------------------------------------


def write_corpus(corpus: Corpus, outdir: Path | str) -> dict[str, Path]:
    """benign.log, test.log, truth JSONL files, the stub script and the spec."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "benign": out / "benign.log",
        "test": out / "test.log",
        "types": out / "truth_types.jsonl",
        "records": out / "truth_records.jsonl",
        "entities": out / "truth_entities.jsonl",
        "attacks": out / "truth_attacks.jsonl",
        "script": out / "stub_script.jsonl",
        "spec": out / "corpus_spec.json",
    }
    atomic_write_text(paths["benign"], "".join(l.text + "\n" for l in corpus.benign))
    atomic_write_text(paths["test"], "".join(l.text + "\n" for l in corpus.test))
    types, records = [], []
    for stem, lines in (("benign", corpus.benign), ("test", corpus.test)):
        for i, ln in enumerate(lines, start=1):
            log_id = f"{stem}:{i}"
            types.append({"log_id": log_id, "type": ln.fmt})
            records.append({"log_id": log_id, "record": ln.record, "attack": ln.attack})
    atomic_write_text(paths["types"], "".join(json.dumps(t, sort_keys=True) + "\n" for t in types))
    atomic_write_text(paths["records"], "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    attack_of = {name: att for name, _, att in ATTACK_ENTITIES.values()}
    ents = [{"name": n, "key": normalize_entity_name(n), "label": lab, "attack": attack_of.get(n)}
            for n, lab in sorted(corpus.entity_labels().items())]
    atomic_write_text(paths["entities"], "".join(json.dumps(e, sort_keys=True) + "\n" for e in ents))
    atomic_write_text(paths["attacks"], "".join(
        json.dumps({"node_key": k, "attack": a}, sort_keys=True) + "\n" for k, a in sorted(corpus.attack_nodes().items())
    ))
    stub_responder(corpus.spec.formats).save(paths["script"])
    atomic_write_text(paths["spec"], json.dumps(corpus.spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths
