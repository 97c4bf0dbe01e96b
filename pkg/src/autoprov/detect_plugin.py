"""The built-in rarity detector behind the external-detector contract.

    python -m autoprov.detect_plugin --model model.json --nodes nodes.jsonl EDGES_CSV OUT_CSV

Reads the edge CSV, takes functional labels from the node file, and writes
``node_key,score`` rows.
"""

from __future__ import annotations

import argparse
import sys

from .core import Timestamp, iter_jsonl
from .detect import RarityModel, score_nodes, write_scores_csv
from .graph import EntityNode, ProvEdge, ProvenanceGraph, read_edges_csv


def graph_from_csv(edges_csv: str, nodes_jsonl: str | None) -> ProvenanceGraph:
    g = ProvenanceGraph()
    if nodes_jsonl:
        for row in iter_jsonl(nodes_jsonl):
            node = EntityNode.from_dict(row)
            g.nodes[node.node_key] = node
    for i, row in enumerate(read_edges_csv(edges_csv)):
        for key in (row["src"], row["dst"]):
            g.nodes.setdefault(key, EntityNode(key))
        time = Timestamp(row["time"]) if row.get("time") else None
        g.edges.append(ProvEdge(row["src"], row["dst"], row["itype"], time, int(row.get("count") or 1), i))
    g._reindex()
    return g


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="autoprov.detect_plugin")
    ap.add_argument("--model", required=True)
    ap.add_argument("--nodes")
    ap.add_argument("edges_csv")
    ap.add_argument("out_csv")
    args = ap.parse_args(argv)
    graph = graph_from_csv(args.edges_csv, args.nodes)
    write_scores_csv(args.out_csv, score_nodes(RarityModel.load(args.model), graph))
    return 0


if __name__ == "__main__":
    sys.exit(main())
