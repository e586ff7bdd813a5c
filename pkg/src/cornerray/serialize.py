"""Bit-stable serialization of branch trees, samples, and reports.

All floating-point output uses 17 significant digits, which round-trips
doubles exactly: loading a serialized tree and serializing it again is
byte-identical.  Sample records are line-oriented (one sample per line)
for diffing and external plotting; the tree summary is a JSON document
emitted by a small writer that preserves key order and float formatting.
"""

from __future__ import annotations

import json

import numpy as np

from .hamiltonian import Terminal
from .tracer import EventKind

__all__ = ["fmt", "emit_json", "tree_to_doc", "dump_tree", "load_tree_doc",
           "dump_samples", "dump_report_lines"]


def fmt(v):
    """A float with 17 significant digits (exact double round-trip)."""
    return format(float(v), ".17g")


def emit_json(obj, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(
            f"{pad}  {json.dumps(str(k))}: {emit_json(v, indent + 1)}"
            for k, v in obj.items())
        return "{\n" + inner + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ", ".join(emit_json(v, indent) for v in obj)
        return "[" + inner + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    return json.dumps(str(obj))


def _point_doc(q):
    if q is None:
        return None
    return {
        "x": [float(v) for v in q.x],
        "y": [float(v) for v in q.y],
        "t": float(q.t),
        "xi": [float(v) for v in q.xi],
        "zeta": [float(v) for v in q.zeta],
        "tau": float(q.tau),
    }


def _event_doc(ev):
    doc = {
        "kind": ev.kind.value,
        "s": float(ev.s),
        "t": float(ev.point.t),
        "face": sorted(int(j) + 1 for j in ev.face),
    }
    if ev.lift_in is not None:
        doc["lift_in"] = _point_doc(ev.lift_in)
    if ev.lift_out is not None:
        doc["lift_out"] = _point_doc(ev.lift_out)
    if ev.n_branches:
        doc["n_branches"] = int(ev.n_branches)
    if ev.glancing_kind is not None:
        doc["glancing"] = {
            "kind": ev.glancing_kind.kind.value,
            "second_derivative": float(ev.glancing_kind.second_derivative),
        }
    if ev.reason:
        doc["reason"] = ev.reason
    return doc


def tree_to_doc(tree):
    """Structured summary document of a branch tree."""
    nodes = []
    ids = {}
    for node in tree.root.walk():
        ids[id(node)] = len(nodes)
        nodes.append(node)
    doc_nodes = []
    for node in nodes:
        parent = None
        for other in nodes:
            if node in other.children:
                parent = ids[id(other)]
        doc_nodes.append({
            "id": ids[id(node)],
            "parent": parent,
            "branch_index": list(node.branch_index),
            "segments": [{
                "kind": seg.kind,
                "s_start": float(seg.s_start),
                "s_end": float(seg.s_end),
                "terminal": seg.terminal.value,
                "face": sorted(int(j) + 1 for j in getattr(seg, "face",
                                                           frozenset())),
            } for seg in node.ray.segments],
            "events": [_event_doc(ev) for ev in node.ray.events],
            "warnings": list(node.ray.warnings),
        })
    return {
        "chart_key": tree.chart.key,
        "k": tree.chart.k,
        "l": tree.chart.l,
        "initial": _point_doc(tree.initial),
        "n_nodes": len(doc_nodes),
        "n_leaves": len(tree.leaves()),
        "nodes": doc_nodes,
    }


def dump_tree(tree):
    return emit_json(tree_to_doc(tree)) + "\n"


def load_tree_doc(text):
    return json.loads(text)


def dump_samples(tree, per_segment=33):
    """Line records: branch id, segment id, s, x.., y.., t, xi.., zeta.., tau."""
    k, l = tree.chart.k, tree.chart.l
    header = ("# branch segment s "
              + " ".join(f"x{j + 1}" for j in range(k)) + (" " if k else "")
              + " ".join(f"y{i + 1}" for i in range(l)) + (" " if l else "")
              + "t "
              + " ".join(f"xi{j + 1}" for j in range(k)) + (" " if k else "")
              + " ".join(f"zeta{i + 1}" for i in range(l)) + (" " if l else "")
              + "tau")
    lines = [header.replace("  ", " ")]
    nodes = list(tree.root.walk())
    for b_id, node in enumerate(nodes):
        for s_id, seg in enumerate(node.ray.segments):
            ss = np.linspace(seg.s_start, seg.s_end, per_segment)
            for s in ss:
                q = seg.point_at(float(s))
                vals = ([fmt(s)] + [fmt(v) for v in q.x]
                        + [fmt(v) for v in q.y] + [fmt(q.t)]
                        + [fmt(v) for v in q.xi] + [fmt(v) for v in q.zeta]
                        + [fmt(q.tau)])
                lines.append(f"{b_id} {s_id} " + " ".join(vals))
    return "\n".join(lines) + "\n"


def dump_report_lines(reports):
    return "\n".join(r.line() for r in reports) + "\n"
