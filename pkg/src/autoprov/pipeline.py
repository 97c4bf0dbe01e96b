"""Run configuration, manifests, and the staged end-to-end pipeline.

Each stage reads files written by earlier stages and writes its own outputs
atomically. The manifest records input and output digests per stage, so a
rerun skips every stage whose inputs and outputs are unchanged and halts on
an artifact that no longer matches what its stage wrote.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from filelock import FileLock, Timeout

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .assistant import AssistantError, AttackSummary, TacticCatalog, explain, tactic_correctness
from .cluster import CandidateLogSet, ClustererState, run_stream
from .core import LogRecord, PersistenceError, atomic_write_text, iter_jsonl, read_log_file, write_jsonl
from .cpe import CandidateProvenanceDB, CpeConfig, InContextPool, run_cpe
from .detect import (
    AttackGraph,
    DetectError,
    build_attack_graph,
    fit_reference_detector,
    read_scores_csv,
    run_plugin,
    score_nodes,
    write_scores_csv,
)
from .embed import EmbeddingProvider, HashingEmbedder, RemoteEmbedder
from .enrich import BehavioralDB, FunctionalityDB, SignatureIndex, enrich_graph
from .evaluation import LabeledRanking, SweepContext, adjusted_rand_index, adp, auc_pr, auc_roc, robustness_sweep
from .graph import ProvenanceGraph, build_graph
from .llm.providers import ChatError, ChatProvider, ChatProviderConfig, OpenAIChatClient, ScriptedResponder
from .rules import RuleDB, apply_to_stream, induce_rules

log = logging.getLogger(__name__)

STAGES = ("cluster", "extract", "rules", "build", "enrich", "detect", "explain", "eval")
DEFAULT_RATES = (0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100)


class ConfigError(ValueError):
    """Invalid configuration; raised before any stage runs."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: str):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


# --- configuration ------------------------------------------------------------------


@dataclass
class RunConfig:
    seed: int
    benign_logs: list[Path]
    test_logs: list[Path]
    db_dir: Path
    out_dir: Path
    chat: dict[str, Any] = field(default_factory=lambda: {"kind": "stub"})
    embedding: dict[str, Any] = field(default_factory=lambda: {"kind": "hashing", "dim": 256})
    radius: float = 0.3
    decay: float = 0.0
    w_min: float = 0.5
    k: int = 32
    m: int = 3
    window_size: int = 1000
    platform: str = "system"
    n_votes: int = 7
    max_workers: int = 1
    max_repair: int = 1
    max_sweeps: int = 3
    n_seed: int = 10
    plugin: list[str] = field(default_factory=list)
    rates: list[float] = field(default_factory=lambda: list(DEFAULT_RATES))
    eval_seed: int = 0
    truth_types: Path | None = None
    truth_attacks: Path | None = None
    tactics: Path | None = None
    manual_labels: Path | None = None

    @property
    def logs(self) -> list[Path]:
        return [*self.benign_logs, *self.test_logs]

    def snapshot(self, base: Path | None = None) -> dict[str, Any]:
        """Plain-data view; paths under ``base`` are written relative to it."""
        def rel(p: Path | str) -> str:
            if base is not None:
                with contextlib.suppress(ValueError):
                    return Path(p).resolve().relative_to(base.resolve()).as_posix()
            return str(p)

        out: dict[str, Any] = {}
        for k, v in self.__dict__.items():
            if isinstance(v, Path):
                v = rel(v)
            elif isinstance(v, list):
                v = [rel(x) if isinstance(x, Path) else x for x in v]
            elif k == "chat" and v.get("script"):
                v = {**v, "script": rel(v["script"])}
            out[k] = v
        return out

    def section_digest(self, *names: str) -> str:
        """Digest of parameters only; file contents are tracked as stage inputs."""
        picked: dict[str, Any] = {}
        for n in names:
            v = getattr(self, n)
            if isinstance(v, list) and v and isinstance(v[0], Path):
                v = [p.name for p in v]
            elif isinstance(v, dict):
                v = {k: x for k, x in v.items() if k != "script"}
            picked[n] = v
        return _sha(json.dumps(picked, sort_keys=True).encode())


_KEYS = {
    "run": {"seed"},
    "paths": {"benign_logs", "test_logs", "db_dir", "out_dir", "truth_types", "truth_attacks", "tactics",
              "manual_labels"},
    "chat": None,
    "embedding": None,
    "cluster": {"radius", "decay", "w_min", "k", "m", "window_size"},
    "cpe": {"platform", "n_votes", "max_workers"},
    "rules": {"max_repair"},
    "enrich": {"max_sweeps"},
    "detect": {"n_seed", "plugin"},
    "eval": {"rates", "seed"},
}


def _set_dotted(d: dict[str, Any], dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if not key:
        raise ConfigError(f"override {dotted!r} must look like section.key=value")
    d.setdefault(section, {})[key] = value


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: Path | str | None, overrides: Iterable[str] = (), base_dir: Path | None = None) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = tomllib.loads(path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base_dir = base_dir or path.parent
    for item in overrides:
        _set_dotted(data, *parse_override(item))
    return config_from_mapping(data, base_dir or Path.cwd())


def config_from_mapping(data: Mapping[str, Any], base_dir: Path) -> RunConfig:
    for section, keys in data.items():
        if section not in _KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(keys, Mapping):
            raise ConfigError(f"[{section}] must be a table")
        allowed = _KEYS[section]
        if allowed is not None:
            extra = set(keys) - allowed
            if extra:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")

    def sec(name: str) -> Mapping[str, Any]:
        return data.get(name, {})

    def path(value: Any) -> Path | None:
        if value in (None, ""):
            return None
        p = Path(value)
        return p if p.is_absolute() else base_dir / p

    def paths(value: Any) -> list[Path]:
        if value is None:
            return []
        if isinstance(value, str):
            value = [value]
        return [path(v) for v in value]

    run, p = sec("run"), sec("paths")
    if "seed" not in run:
        raise ConfigError("run.seed is mandatory")
    try:
        cfg = RunConfig(
            seed=int(run["seed"]),
            benign_logs=paths(p.get("benign_logs")),
            test_logs=paths(p.get("test_logs")),
            db_dir=path(p.get("db_dir", "db")),
            out_dir=path(p.get("out_dir", "out")),
            chat=dict(sec("chat")) or {"kind": "stub"},
            embedding=dict(sec("embedding")) or {"kind": "hashing", "dim": 256},
            truth_types=path(p.get("truth_types")),
            truth_attacks=path(p.get("truth_attacks")),
            tactics=path(p.get("tactics")),
            manual_labels=path(p.get("manual_labels")),
            **{k: v for k, v in sec("cluster").items()},
            **{k: v for k, v in sec("cpe").items()},
            **{k: v for k, v in sec("rules").items()},
            **{k: v for k, v in sec("enrich").items()},
            **{k: v for k, v in sec("detect").items()},
            rates=list(sec("eval").get("rates", DEFAULT_RATES)),
            eval_seed=int(sec("eval").get("seed", run["seed"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.chat.get("kind") == "stub" and cfg.chat.get("script"):
        cfg.chat["script"] = str(path(cfg.chat["script"]))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if not cfg.benign_logs or not cfg.test_logs:
        raise ConfigError("paths.benign_logs and paths.test_logs must both be given")
    for p in [*cfg.logs, cfg.truth_types, cfg.truth_attacks, cfg.tactics, cfg.manual_labels]:
        if p is not None and not p.is_file():
            raise ConfigError(f"file not found: {p}")
    stems = [p.stem for p in cfg.logs]
    if len(stems) != len(set(stems)):
        raise ConfigError("log files must have distinct names; log ids are <stem>:<line>")
    kind = cfg.chat.get("kind")
    if kind == "stub":
        script = cfg.chat.get("script")
        if not script or not Path(script).is_file():
            raise ConfigError("chat.script must name an existing stub script")
    elif kind == "openai":
        for key in ("endpoint_url", "model_name"):
            if not cfg.chat.get(key):
                raise ConfigError(f"chat.{key} is required for an openai provider")
    else:
        raise ConfigError(f"chat.kind must be 'stub' or 'openai', not {kind!r}")
    ekind = cfg.embedding.get("kind", "hashing")
    if ekind not in ("hashing", "remote"):
        raise ConfigError(f"embedding.kind must be 'hashing' or 'remote', not {ekind!r}")
    if ekind == "remote" and not (cfg.embedding.get("endpoint_url") and cfg.embedding.get("model_name")):
        raise ConfigError("embedding.endpoint_url and embedding.model_name are required for remote embeddings")
    if not 0 < cfg.radius <= 2:
        raise ConfigError("cluster.radius must lie in (0, 2]")
    if cfg.decay < 0 or cfg.w_min < 0:
        raise ConfigError("cluster.decay and cluster.w_min must be >= 0")
    for name in ("k", "m", "window_size", "n_votes", "max_workers", "n_seed"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be >= 1")
    if cfg.max_repair < 0 or cfg.max_sweeps < 0:
        raise ConfigError("rules.max_repair and enrich.max_sweeps must be >= 0")
    for r in cfg.rates:
        if not 0 <= r <= 100:
            raise ConfigError(f"poisoning rate {r} outside [0, 100]")


# --- providers ------------------------------------------------------------------------


def make_chat(cfg: RunConfig, model: str | None = None) -> ChatProvider:
    if cfg.chat["kind"] == "stub":
        return ScriptedResponder.load(cfg.chat["script"])
    return OpenAIChatClient(ChatProviderConfig(
        endpoint_url=cfg.chat["endpoint_url"],
        model_name=model or cfg.chat["model_name"],
        api_key_env=cfg.chat.get("api_key_env", "OPENAI_API_KEY"),
        retry_limit=int(cfg.chat.get("retry_limit", 3)),
        timeout_ms=int(cfg.chat.get("timeout_ms", 60_000)),
    ))


def make_judges(cfg: RunConfig, provider: ChatProvider) -> list[ChatProvider]:
    models = cfg.chat.get("judges")
    if cfg.chat["kind"] == "stub" or not models:
        return [provider] * 3
    if len(models) != 3:
        raise ConfigError("chat.judges must list exactly three models")
    return [make_chat(cfg, m) for m in models]


def make_embedder(cfg: RunConfig) -> EmbeddingProvider:
    e = cfg.embedding
    if e.get("kind", "hashing") == "hashing":
        return HashingEmbedder(int(e.get("dim", 256)))
    return RemoteEmbedder(e["endpoint_url"], e["model_name"], os.environ.get(e.get("api_key_env", "OPENAI_API_KEY")))


# --- manifest ------------------------------------------------------------------------


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    path: Path
    data: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        if path.exists():
            try:
                return cls(path, json.loads(path.read_text(encoding="utf-8")))
            except json.JSONDecodeError as exc:
                raise StageError("manifest", f"unreadable manifest {path}: {exc}") from exc
        return cls(path, {"stages": {}})

    @property
    def stages(self) -> dict[str, Any]:
        return self.data.setdefault("stages", {})

    def save(self) -> None:
        atomic_write_text(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# --- stages ----------------------------------------------------------------------------


@dataclass
class Stage:
    name: str
    inputs: Callable[["Run"], dict[str, Path]]   # description -> path
    outputs: Callable[["Run"], list[Path]]
    params: tuple[str, ...]
    body: Callable[["Run"], None]


class Run:
    """Shared state for one pipeline invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.db = cfg.db_dir
        self.out = cfg.out_dir
        self._chat: ChatProvider | None = None
        self._embedder: EmbeddingProvider | None = None
        self.manifest = Manifest.load(self.out / "manifest.json")

    # lazily built so validation-only commands never touch the network
    @property
    def chat(self) -> ChatProvider:
        if self._chat is None:
            self._chat = make_chat(self.cfg)
        return self._chat

    @property
    def embedder(self) -> EmbeddingProvider:
        if self._embedder is None:
            self._embedder = make_embedder(self.cfg)
        return self._embedder

    # artifact paths
    def p(self, name: str) -> Path:
        return {
            "candidates": self.out / "candidates.jsonl",
            "assignments": self.out / "assignments.jsonl",
            "clusterer": self.db / "clusterer.jsonl",
            "pdb": self.db / "candidate_provenance.jsonl",
            "skips": self.out / "cpe_skips.jsonl",
            "cpe_outputs": self.out / "cpe_outputs.jsonl",
            "rules": self.db / "rules.jsonl",
            "rejections": self.out / "rule_rejections.jsonl",
            "records": self.out / "records.jsonl",
            "apply_stats": self.out / "apply_stats.json",
            "graph_benign": self.out / "graph_benign",
            "graph_test": self.out / "graph_test",
            "fdb": self.db / "functionality.jsonl",
            "bdb": self.db / "behavioral.jsonl",
            "index": self.db / "signatures.jsonl",
            "enriched_benign": self.out / "enriched_benign",
            "enriched_test": self.out / "enriched_test",
            "enrich_summary": self.out / "enrich_summary.json",
            "detector": self.out / "detector.json",
            "scores": self.out / "scores.csv",
            "attack_graph": self.out / "attack_graph.jsonl",
            "explanation": self.out / "explanation.json",
            "report": self.out / "report.txt",
            "metrics": self.out / "metrics.json",
            "metrics_csv": self.out / "metrics.csv",
            "robustness": self.out / "robustness.csv",
        }[name]

    def graph_files(self, name: str) -> list[Path]:
        d = self.p(name)
        return [d / f for f in ("nodes.jsonl", "edges.jsonl", "edges.csv", "graph.json")]

    def read_logs(self) -> list[LogRecord]:
        out: list[LogRecord] = []
        for path in self.cfg.logs:
            out += read_log_file(path, start_seq=len(out), window_size=self.cfg.window_size)
        return out

    def benign_stems(self) -> set[str]:
        return {p.stem for p in self.cfg.benign_logs}


def _write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _stage_cluster(run: Run) -> None:
    cfg = run.cfg
    logs = run.read_logs()
    if not logs:
        raise StageError("cluster", "no log lines in the input files")
    state = ClustererState(radius=cfg.radius, decay=cfg.decay, w_min=cfg.w_min)
    cands, state, assignments = run_stream(logs, run.embedder, state, cfg.k, cfg.m, cfg.seed)
    seq = {r.log_id: r.arrival_seq for r in logs}
    rows = [{**row, "arrival_seq": seq[row["log_id"]]} for row in cands.to_rows()]
    run.db.mkdir(parents=True, exist_ok=True)
    write_jsonl(run.p("candidates"), rows)
    write_jsonl(run.p("assignments"), [{"log_id": r.log_id, "cluster_id": assignments[r.log_id]} for r in logs])
    state.save(run.p("clusterer"))
    run.manifest.data["providers"] = {**run.manifest.data.get("providers", {}),
                                      "embedding": run.embedder.name, "embedding_dim": run.embedder.dim}


def _read_candidates(run: Run) -> tuple[list[LogRecord], CandidateLogSet]:
    rows = list(iter_jsonl(run.p("candidates")))
    logs = [LogRecord(r["log_id"], r["raw_text"], r["arrival_seq"]) for r in rows]
    return logs, CandidateLogSet([(r["log_id"], r["raw_text"], r["cluster_id"]) for r in rows])


def _stage_extract(run: Run) -> None:
    cfg = run.cfg
    logs, _ = _read_candidates(run)
    pool = InContextPool(seed=cfg.seed)
    db, skips, outputs = run_cpe(run.chat, logs, pool,
                                 CpeConfig(cfg.platform, cfg.n_votes, cfg.seed, cfg.max_workers))
    db.save(run.p("pdb"))
    write_jsonl(run.p("skips"), skips.entries)
    write_jsonl(run.p("cpe_outputs"), [o.to_dict() for o in outputs])
    if skips.entries:
        log.warning("CPE skipped %d of %d candidate logs", len(skips.entries), len(logs))


def _stage_rules(run: Run) -> None:
    logs, cands = _read_candidates(run)
    db = CandidateProvenanceDB.load(run.p("pdb"))
    rule_db, rejections = induce_rules(run.chat, db.records(), {r.log_id: r.raw_text for r in logs},
                                       cands.cluster_of(), max_repair=run.cfg.max_repair)
    rule_db.save(run.p("rules"))
    write_jsonl(run.p("rejections"), [{"source_log_id": r.source_log_id, "report": r.report} for r in rejections])
    if not len(rule_db):
        raise StageError("rules", "no rule set was accepted")


def _stage_build(run: Run) -> None:
    logs = run.read_logs()
    rule_db = RuleDB.load(run.p("rules"))
    assignments = {r["log_id"]: r["cluster_id"] for r in iter_jsonl(run.p("assignments"))}
    records, stats, unmatched = apply_to_stream(rule_db, logs, assignments)
    write_jsonl(run.p("records"), records)
    _write_json(run.p("apply_stats"), {
        "logs": stats.n_logs, "records": stats.n_records, "unmatched": stats.n_unmatched,
        "unmatched_rate": stats.unmatched_rate, "unmatched_log_ids": unmatched,
    })
    benign = run.benign_stems()
    stem = lambda r: r.source_log_id.rsplit(":", 1)[0]
    build_graph(r for r in records if stem(r) in benign).save(run.p("graph_benign"))
    build_graph(r for r in records if stem(r) not in benign).save(run.p("graph_test"))


def _stage_enrich(run: Run) -> None:
    f_db, b_db, index = FunctionalityDB(), BehavioralDB(), SignatureIndex()
    if run.cfg.manual_labels:
        f_db.load_manual(run.cfg.manual_labels)
    summary = {}
    for src, dst in (("graph_benign", "enriched_benign"), ("graph_test", "enriched_test")):
        g = ProvenanceGraph.load(run.p(src))
        result = enrich_graph(g, run.chat, f_db, b_db, index, platform=run.cfg.platform,
                              max_sweeps=run.cfg.max_sweeps)
        g.save(run.p(dst))
        summary[dst] = {**result.summary(), "unlabeled_nodes": result.unlabeled}
    f_db.save(run.p("fdb"))
    b_db.save(run.p("bdb"))
    index.save(run.p("index"))
    _write_json(run.p("enrich_summary"), summary)


def _stage_detect(run: Run) -> None:
    benign = ProvenanceGraph.load(run.p("enriched_benign"))
    test = ProvenanceGraph.load(run.p("enriched_test"))
    try:
        model = fit_reference_detector(benign)
    except DetectError as exc:
        raise StageError("detect", str(exc)) from exc
    model.save(run.p("detector"))
    edges = run.p("enriched_test") / "edges.csv"
    if run.cfg.plugin:
        subst = {"{model}": str(run.p("detector")), "{nodes}": str(run.p("enriched_test") / "nodes.jsonl")}
        command = [subst.get(part, part) for part in run.cfg.plugin]
        try:
            scores = run_plugin(command, edges, run.p("scores"), test.nodes)
        except (DetectError, OSError) as exc:
            raise StageError("detect", f"detector plugin failed: {exc}") from exc
    else:
        write_scores_csv(run.p("scores"), score_nodes(model, test))
        scores = read_scores_csv(run.p("scores"), test.nodes)
    if not scores:
        raise StageError("detect", "test graph has no nodes to score")
    build_attack_graph(test, scores, run.cfg.n_seed).save(run.p("attack_graph"))


def _catalog(run: Run) -> TacticCatalog:
    return TacticCatalog.load(run.cfg.tactics)


def _stage_explain(run: Run) -> None:
    ag = AttackGraph.load(run.p("attack_graph"))
    graph = ProvenanceGraph.load(run.p("enriched_test"))
    f_db = FunctionalityDB.load(run.p("fdb"))
    try:
        result = explain(run.chat, ag, graph, f_db, _catalog(run), run.cfg.max_workers)
    except AssistantError as exc:
        raise StageError("explain", str(exc)) from exc
    atomic_write_text(run.p("explanation"), json.dumps(result.to_dict(), indent=2, sort_keys=True,
                                                       ensure_ascii=False) + "\n")
    atomic_write_text(run.p("report"), result.summary.report())


def _fmt(v: Any) -> str:
    return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)


def _stage_eval(run: Run) -> None:
    cfg = run.cfg
    recorded = run.manifest.data.get("providers", {}).get("embedding_dim")
    if recorded is not None and recorded != run.embedder.dim:
        raise StageError("eval", f"embedding dimension mismatch: artifacts built with {recorded}, "
                                 f"configured provider has {run.embedder.dim}")
    metrics: dict[str, Any] = {}
    stats = json.loads(run.p("apply_stats").read_text(encoding="utf-8"))
    metrics["rule_unmatched_rate"] = stats["unmatched_rate"]
    if cfg.truth_types:
        truth = {r["log_id"]: r["type"] for r in iter_jsonl(cfg.truth_types)}
        pred = {r["log_id"]: r["cluster_id"] for r in iter_jsonl(run.p("assignments"))}
        common = sorted(set(truth) & set(pred))
        metrics["ari"] = adjusted_rand_index({k: pred[k] for k in common}, {k: truth[k] for k in common})
    graph = ProvenanceGraph.load(run.p("enriched_test"))
    scores = read_scores_csv(run.p("scores"), graph.nodes)
    if cfg.truth_attacks:
        attack_of = {r["node_key"]: r["attack"] for r in iter_jsonl(cfg.truth_attacks)}
        ranking = LabeledRanking.from_scores(scores, attack_of)
        metrics["auc_roc"] = auc_roc(ranking)
        metrics["auc_pr"] = auc_pr(ranking)
        metrics["adp"] = adp(ranking)
    ag = AttackGraph.load(run.p("attack_graph"))
    f_db = FunctionalityDB.load(run.p("fdb"))
    catalog = _catalog(run)
    judges = make_judges(cfg, run.chat)
    summary = AttackSummary.from_dict(json.loads(run.p("explanation").read_text(encoding="utf-8")))
    metrics["alpha_tc"] = tactic_correctness(summary, judges, catalog)
    ctx = SweepContext(graph, ag, f_db, BehavioralDB.load(run.p("bdb")), SignatureIndex.load(run.p("index")),
                       run.chat, judges, catalog, run.embedder, cfg.max_sweeps)
    rows = robustness_sweep(ctx, cfg.rates, cfg.eval_seed)
    metrics["robustness"] = [r.to_dict() for r in rows]
    _write_json(run.p("metrics"), metrics)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    for key in sorted(k for k in metrics if k != "robustness"):
        w.writerow([key, _fmt(metrics[key])])
    atomic_write_text(run.p("metrics_csv"), buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rate", "n_poisoned", "n_relabeled", "alpha_tc", "alpha_r", "similarity", "error"])
    for r in rows:
        w.writerow([_fmt(r.rate), r.n_poisoned, r.n_relabeled, _fmt(r.alpha_tc), _fmt(r.alpha_r),
                    _fmt(r.similarity), r.error or ""])
    atomic_write_text(run.p("robustness"), buf.getvalue())


def _chat_inputs(run: Run) -> dict[str, Path]:
    script = run.cfg.chat.get("script")
    return {"stub script": Path(script)} if run.cfg.chat.get("kind") == "stub" and script else {}


def _log_inputs(run: Run) -> dict[str, Path]:
    return {f"log file {p.name}": p for p in run.cfg.logs}


def _optional(run: Run, **paths: Path | None) -> dict[str, Path]:
    return {k: v for k, v in paths.items() if v is not None}


STAGE_TABLE: dict[str, Stage] = {
    "cluster": Stage(
        "cluster", _log_inputs,
        lambda r: [r.p("candidates"), r.p("assignments"), r.p("clusterer")],
        ("seed", "radius", "decay", "w_min", "k", "m", "window_size", "embedding"),
        _stage_cluster,
    ),
    "extract": Stage(
        "extract",
        lambda r: {"candidate log set": r.p("candidates"), **_chat_inputs(r)},
        lambda r: [r.p("pdb"), r.p("skips"), r.p("cpe_outputs")],
        ("seed", "platform", "n_votes", "chat"),
        _stage_extract,
    ),
    "rules": Stage(
        "rules",
        lambda r: {"candidate provenance database": r.p("pdb"), "candidate log set": r.p("candidates"),
                   **_chat_inputs(r)},
        lambda r: [r.p("rules"), r.p("rejections")],
        ("max_repair", "chat"),
        _stage_rules,
    ),
    "build": Stage(
        "build",
        lambda r: {"rule database": r.p("rules"), "cluster assignments": r.p("assignments"), **_log_inputs(r)},
        lambda r: [r.p("records"), r.p("apply_stats"), *r.graph_files("graph_benign"), *r.graph_files("graph_test")],
        ("benign_logs", "test_logs"),
        _stage_build,
    ),
    "enrich": Stage(
        "enrich",
        lambda r: {**{f"provenance graph {p.parent.name}/{p.name}": p
                      for p in [*r.graph_files("graph_benign"), *r.graph_files("graph_test")]},
                   **_chat_inputs(r), **_optional(r, **{"manual labels": r.cfg.manual_labels})},
        lambda r: [r.p("fdb"), r.p("bdb"), r.p("index"), r.p("enrich_summary"),
                   *r.graph_files("enriched_benign"), *r.graph_files("enriched_test")],
        ("platform", "max_sweeps", "chat"),
        _stage_enrich,
    ),
    "detect": Stage(
        "detect",
        lambda r: {f"enriched graph {p.parent.name}/{p.name}": p
                   for p in [*r.graph_files("enriched_benign"), *r.graph_files("enriched_test")]},
        lambda r: [r.p("detector"), r.p("scores"), r.p("attack_graph")],
        ("n_seed", "plugin"),
        _stage_detect,
    ),
    "explain": Stage(
        "explain",
        lambda r: {"attack graph": r.p("attack_graph"), "functionality database": r.p("fdb"),
                   **{f"enriched graph {p.name}": p for p in r.graph_files("enriched_test")},
                   **_chat_inputs(r), **_optional(r, **{"tactic catalog": r.cfg.tactics})},
        lambda r: [r.p("explanation"), r.p("report")],
        ("chat",),
        _stage_explain,
    ),
    "eval": Stage(
        "eval",
        lambda r: {"attack graph": r.p("attack_graph"), "explanation": r.p("explanation"),
                   "node scores": r.p("scores"), "cluster assignments": r.p("assignments"),
                   "rule application stats": r.p("apply_stats"), "functionality database": r.p("fdb"),
                   "behavioral database": r.p("bdb"), "signature index": r.p("index"),
                   **{f"enriched graph {p.name}": p for p in r.graph_files("enriched_test")},
                   **_chat_inputs(r),
                   **_optional(r, **{"type ground truth": r.cfg.truth_types,
                                     "attack ground truth": r.cfg.truth_attacks,
                                     "tactic catalog": r.cfg.tactics})},
        lambda r: [r.p("metrics"), r.p("metrics_csv"), r.p("robustness")],
        ("rates", "eval_seed", "max_sweeps", "embedding", "chat"),
        _stage_eval,
    ),
}


def _rel(run: Run, p: Path) -> str:
    try:
        return str(p.resolve().relative_to(run.out.resolve().parent))
    except ValueError:
        return str(p)


def run_stage(run: Run, name: str, resume: bool = False) -> bool:
    """Run one stage; returns False when it was skipped on a digest match."""
    stage = STAGE_TABLE[name]
    inputs = stage.inputs(run)
    missing = [desc for desc, p in inputs.items() if not p.is_file()]
    if missing:
        raise StageError(name, "; ".join(f"missing {d} ({inputs[d]})" for d in missing))
    in_digests = {_rel(run, p): file_digest(p) for p in inputs.values()}
    params = run.cfg.section_digest(*stage.params)
    entry = run.manifest.stages.get(name)
    if resume and entry and entry.get("inputs") == in_digests and entry.get("params") == params:
        outs = entry.get("outputs", {})
        present = {k: (run.out.parent / k) if not Path(k).is_absolute() else Path(k) for k in outs}
        if outs and all(p.is_file() for p in present.values()):
            for key, p in present.items():
                if file_digest(p) != outs[key]:
                    raise StageError(name, f"artifact {key} does not match the digest recorded in the manifest")
            log.info("stage %s: inputs unchanged, skipping", name)
            return False
    log.info("stage %s: running", name)
    run.out.mkdir(parents=True, exist_ok=True)
    run.db.mkdir(parents=True, exist_ok=True)
    try:
        stage.body(run)
    except StageError:
        raise
    except (ChatError, PersistenceError, DetectError, OSError, KeyError, ValueError) as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    run.manifest.stages[name] = {
        "params": params,
        "inputs": in_digests,
        "outputs": {_rel(run, p): file_digest(p) for p in stage.outputs(run)},
    }
    run.manifest.save()
    return True


def _init_manifest(run: Run) -> None:
    m = run.manifest.data
    m["tool"] = {"name": "autoprov", "version": __version__}
    m["config"] = run.cfg.snapshot(run.out.parent)
    providers = m.setdefault("providers", {})
    providers["chat"] = run.chat.name


def lock_for(cfg: RunConfig) -> FileLock:
    cfg.db_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(str(cfg.db_dir / ".autoprov.lock"), timeout=0)


def execute(cfg: RunConfig, stages: Iterable[str], resume: bool) -> list[tuple[str, bool]]:
    """Run stages in order under the database-directory lock."""
    lock = lock_for(cfg)
    try:
        lock.acquire()
    except Timeout:
        raise ConfigError(f"database directory {cfg.db_dir} is in use by another run") from None
    try:
        run = Run(cfg)
        _init_manifest(run)
        ran = []
        for name in stages:
            ran.append((name, run_stage(run, name, resume)))
        run.manifest.save()
        return ran
    finally:
        lock.release()


def run_pipeline(cfg: RunConfig, resume: bool = True) -> list[tuple[str, bool]]:
    return execute(cfg, STAGES, resume)
