"""
Vulnerability property graph: construction, shared patterns, JSON-LD and named queries
"""

import json
from collections import defaultdict
from enum import Enum
from itertools import combinations
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import structlog
from pydantic import BaseModel, ConfigDict, Field

from .errors import GraphBuildError, JsonLdImportError
from .models import CRITICAL_KINDS, CveIdentity, CveRank, CweRow, ErrorKind, KleeErrorRecord

logger = structlog.get_logger(__name__)


class NodeKind(str, Enum):
    CVE = "cve"
    CWE = "cwe"
    ERROR_TYPE = "error_type"
    SYM_PATH = "sym_path"


class EdgeKind(str, Enum):
    HAS_ERROR = "has_error"
    TRIGGERED_BY = "triggered_by"
    CLASSIFIED_AS = "classified_as"
    SHARED_PATTERN = "shared_pattern"


class GraphNode(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    node_kind: NodeKind
    attrs: Dict[str, Any] = {}


class GraphEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    edge_kind: EdgeKind
    from_id: str
    to_id: str
    weight: Optional[int] = Field(None, ge=1)


def cve_node_id(cve_id: str) -> str:
    return f"cve:{cve_id}"


def cwe_node_id(cwe_id: int) -> str:
    return f"cwe:{cwe_id}"


def error_node_id(kind: ErrorKind) -> str:
    return f"err:{kind.value}"


def path_node_id(cve_id: str, test_id: str) -> str:
    return f"path:{cve_id}/{test_id}"


class VulnGraph:
    """Typed wrapper over a ``networkx.MultiDiGraph`` whose edge keys are edge kinds"""

    def __init__(self) -> None:
        self.graph = nx.MultiDiGraph()

    def add_node(self, node: GraphNode) -> None:
        if node.id in self.graph:
            raise GraphBuildError(f"duplicate node id {node.id}")
        self.graph.add_node(node.id, node_kind=node.node_kind, attrs=dict(node.attrs))

    def add_edge(self, edge: GraphEdge) -> None:
        for endpoint in (edge.from_id, edge.to_id):
            if endpoint not in self.graph:
                raise GraphBuildError(f"edge {edge.edge_kind.value} references missing node {endpoint}")
        self.graph.add_edge(edge.from_id, edge.to_id, key=edge.edge_kind.value, weight=edge.weight)

    def remove_edges(self, kind: EdgeKind) -> None:
        doomed = [(u, v, k) for u, v, k in self.graph.edges(keys=True) if k == kind.value]
        self.graph.remove_edges_from(doomed)

    def has_node(self, node_id: str) -> bool:
        return node_id in self.graph

    def node(self, node_id: str) -> GraphNode:
        data = self.graph.nodes[node_id]
        return GraphNode(id=node_id, node_kind=data["node_kind"], attrs=data["attrs"])

    def nodes(self, kind: Optional[NodeKind] = None) -> List[GraphNode]:
        return [
            self.node(node_id)
            for node_id in sorted(self.graph.nodes)
            if kind is None or self.graph.nodes[node_id]["node_kind"] == kind
        ]

    def edges(self, kind: Optional[EdgeKind] = None) -> List[GraphEdge]:
        found = [
            GraphEdge(edge_kind=EdgeKind(key), from_id=u, to_id=v, weight=data.get("weight"))
            for u, v, key, data in self.graph.edges(keys=True, data=True)
            if kind is None or key == kind.value
        ]
        return sorted(found, key=lambda e: (e.edge_kind.value, e.from_id, e.to_id))

    def out_edges(self, node_id: str, kind: EdgeKind) -> List[Tuple[str, Optional[int]]]:
        return sorted(
            (v, data.get("weight"))
            for _, v, key, data in self.graph.out_edges(node_id, keys=True, data=True)
            if key == kind.value
        )

    def node_count(self) -> int:
        return self.graph.number_of_nodes()

    def edge_count(self) -> int:
        return self.graph.number_of_edges()

    def stats(self) -> Dict[str, Dict[str, int]]:
        """Node and edge counts by kind"""
        nodes: Dict[str, int] = {kind.value: 0 for kind in NodeKind}
        for _, data in self.graph.nodes(data=True):
            nodes[data["node_kind"].value] += 1
        edges: Dict[str, int] = {kind.value: 0 for kind in EdgeKind}
        for _, _, key in self.graph.edges(keys=True):
            edges[key] += 1
        return {"nodes": nodes, "edges": edges}


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _path_attrs(cve_id: str, record: KleeErrorRecord) -> Dict[str, Any]:
    attrs: Dict[str, Any] = {"cve_id": cve_id, "test_id": record.test_id, "kind": record.kind.value}
    if record.faulting_function:
        attrs["faulting_function"] = record.faulting_function
    if record.concrete_inputs:
        attrs["concrete_inputs"] = dict(sorted(record.concrete_inputs.items()))
    return attrs


def build_graph(file_results: Iterable[Tuple[CveIdentity, Sequence[KleeErrorRecord]]]) -> VulnGraph:
    """Fold per-file results into the graph, then derive shared-pattern edges"""
    graph = VulnGraph()
    owners: Dict[str, Any] = {}

    for identity, records in file_results:
        if identity.cve_id in owners:
            raise GraphBuildError(
                f"duplicate {identity.cve_id}: {owners[identity.cve_id]} and {identity.origin_path}"
            )
        owners[identity.cve_id] = identity.origin_path

        cve_id = cve_node_id(identity.cve_id)
        graph.add_node(GraphNode(id=cve_id, node_kind=NodeKind.CVE,
                                 attrs={"cve_id": identity.cve_id, "cwe_id": identity.cwe_id}))
        cwe_id = cwe_node_id(identity.cwe_id)
        if not graph.has_node(cwe_id):
            graph.add_node(GraphNode(id=cwe_id, node_kind=NodeKind.CWE, attrs={"cwe_id": identity.cwe_id}))
        graph.add_edge(GraphEdge(edge_kind=EdgeKind.CLASSIFIED_AS, from_id=cve_id, to_id=cwe_id))

        counts: Dict[ErrorKind, int] = defaultdict(int)
        for record in records:
            counts[record.kind] += 1
            path_id = path_node_id(identity.cve_id, record.test_id)
            graph.add_node(GraphNode(id=path_id, node_kind=NodeKind.SYM_PATH,
                                     attrs=_path_attrs(identity.cve_id, record)))
            graph.add_edge(GraphEdge(edge_kind=EdgeKind.TRIGGERED_BY, from_id=cve_id, to_id=path_id))

        for kind in sorted(counts, key=lambda k: k.value):
            err_id = error_node_id(kind)
            if not graph.has_node(err_id):
                graph.add_node(GraphNode(id=err_id, node_kind=NodeKind.ERROR_TYPE, attrs={"kind": kind.value}))
            graph.add_edge(GraphEdge(edge_kind=EdgeKind.HAS_ERROR, from_id=cve_id, to_id=err_id,
                                     weight=counts[kind]))

    refresh_shared_patterns(graph)
    logger.info("graph_built", **{f"{k}_nodes": v for k, v in graph.stats()["nodes"].items()})
    return graph


def _pattern_keys(graph: VulnGraph) -> Dict[str, Set[Tuple[str, str]]]:
    keys: Dict[str, Set[Tuple[str, str]]] = {}
    for cve in graph.nodes(NodeKind.CVE):
        owned: Set[Tuple[str, str]] = set()
        for path_id, _ in graph.out_edges(cve.id, EdgeKind.TRIGGERED_BY):
            attrs = graph.node(path_id).attrs
            if attrs.get("faulting_function"):
                owned.add((attrs["kind"], attrs["faulting_function"]))
        keys[cve.id] = owned
    return keys


def shared_pattern_edges(graph: VulnGraph) -> List[GraphEdge]:
    """One edge per CVE pair sharing a (kind, faulting function) key, weighted by shared keys"""
    keys = _pattern_keys(graph)
    edges = []
    for first, second in combinations(sorted(keys), 2):
        shared = keys[first] & keys[second]
        if shared:
            edges.append(GraphEdge(edge_kind=EdgeKind.SHARED_PATTERN, from_id=first, to_id=second,
                                   weight=len(shared)))
    return edges


def refresh_shared_patterns(graph: VulnGraph) -> None:
    graph.remove_edges(EdgeKind.SHARED_PATTERN)
    for edge in shared_pattern_edges(graph):
        graph.add_edge(edge)


def cves_sharing_pattern(graph: VulnGraph, cve_id: str) -> List[Tuple[str, int]]:
    """CVE ids linked to ``cve_id`` by a shared pattern, with the shared-key count"""
    node_id = cve_node_id(cve_id)
    found = []
    for edge in graph.edges(EdgeKind.SHARED_PATTERN):
        if node_id in (edge.from_id, edge.to_id):
            other = edge.to_id if edge.from_id == node_id else edge.from_id
            found.append((graph.node(other).attrs["cve_id"], edge.weight or 0))
    return sorted(found)


# ---------------------------------------------------------------------------
# JSON-LD
# ---------------------------------------------------------------------------

VOCAB = "https://w3id.org/symex/vocab#"

NODE_TYPES = {
    NodeKind.CVE: "CVE",
    NodeKind.CWE: "CWE",
    NodeKind.ERROR_TYPE: "ErrorType",
    NodeKind.SYM_PATH: "SymPath",
}
EDGE_TERMS = {
    EdgeKind.HAS_ERROR: "hasError",
    EdgeKind.TRIGGERED_BY: "triggeredBy",
    EdgeKind.CLASSIFIED_AS: "classifiedAs",
    EdgeKind.SHARED_PATTERN: "sharedPattern",
}

JSONLD_CONTEXT: Dict[str, Any] = {
    "@vocab": VOCAB,
    "symex": VOCAB,
    **{term: f"symex:{term}" for term in NODE_TYPES.values()},
    **{term: {"@id": f"symex:{term}", "@type": "@id"} for term in EDGE_TERMS.values()},
    "weight": "symex:weight",
    "attributes": {"@id": "symex:attributes", "@type": "@json"},
}


def export_jsonld(graph: VulnGraph) -> Dict[str, Any]:
    entries = []
    for node in graph.nodes():
        entry: Dict[str, Any] = {
            "@id": node.id,
            "@type": NODE_TYPES[node.node_kind],
            "attributes": node.attrs,
        }
        for kind, term in EDGE_TERMS.items():
            refs = []
            for target, weight in graph.out_edges(node.id, kind):
                ref: Dict[str, Any] = {"@id": target}
                if weight is not None:
                    ref["weight"] = weight
                refs.append(ref)
            if refs:
                entry[term] = refs
        entries.append(entry)
    return {"@context": JSONLD_CONTEXT, "@graph": entries}


def dumps_jsonld(document: Dict[str, Any]) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def import_jsonld(document: Dict[str, Any]) -> VulnGraph:
    """Rebuild a graph from ``export_jsonld`` output"""
    if not isinstance(document, dict) or set(document) != {"@context", "@graph"}:
        raise JsonLdImportError("document must hold exactly '@context' and '@graph'")
    entries = document["@graph"]
    if not isinstance(entries, list):
        raise JsonLdImportError("'@graph' must be a list")

    type_kinds = {term: kind for kind, term in NODE_TYPES.items()}
    term_kinds = {term: kind for kind, term in EDGE_TERMS.items()}
    allowed_keys = {"@id", "@type", "attributes", *term_kinds}

    graph = VulnGraph()
    pending: List[GraphEdge] = []
    for entry in entries:
        if not isinstance(entry, dict) or "@id" not in entry:
            raise JsonLdImportError("every node object needs an '@id'")
        node_id = entry["@id"]
        unknown = set(entry) - allowed_keys
        if unknown:
            raise JsonLdImportError(f"unknown edge kind or key {sorted(unknown)} on {node_id}")
        if entry.get("@type") not in type_kinds:
            raise JsonLdImportError(f"unknown node type {entry.get('@type')!r} on {node_id}")
        if graph.has_node(node_id):
            raise JsonLdImportError(f"duplicate id {node_id}")
        graph.add_node(GraphNode(id=node_id, node_kind=type_kinds[entry["@type"]],
                                 attrs=entry.get("attributes", {})))
        for term, kind in term_kinds.items():
            for ref in entry.get(term, []):
                if not isinstance(ref, dict) or "@id" not in ref:
                    raise JsonLdImportError(f"malformed {term} reference on {node_id}")
                pending.append(GraphEdge(edge_kind=kind, from_id=node_id, to_id=ref["@id"],
                                         weight=ref.get("weight")))

    for edge in pending:
        if not graph.has_node(edge.to_id):
            raise JsonLdImportError(f"dangling reference to {edge.to_id} from {edge.from_id}")
        graph.add_edge(edge)
    return graph


# ---------------------------------------------------------------------------
# Named queries
# ---------------------------------------------------------------------------


def _critical_by_cve(graph: VulnGraph) -> Dict[str, Dict[ErrorKind, int]]:
    critical_ids = {error_node_id(kind): kind for kind in CRITICAL_KINDS}
    totals: Dict[str, Dict[ErrorKind, int]] = {}
    for cve in graph.nodes(NodeKind.CVE):
        per_kind = {kind: 0 for kind in CRITICAL_KINDS}
        for target, weight in graph.out_edges(cve.id, EdgeKind.HAS_ERROR):
            if target in critical_ids:
                per_kind[critical_ids[target]] += weight or 0
        totals[cve.id] = per_kind
    return totals


def errors_by_cwe(graph: VulnGraph) -> List[CweRow]:
    """Files, detected files and critical errors per CWE"""
    critical = _critical_by_cve(graph)
    rows = []
    for cwe in graph.nodes(NodeKind.CWE):
        members = [u for u, _, key in graph.graph.in_edges(cwe.id, keys=True) if key == EdgeKind.CLASSIFIED_AS.value]
        totals = [sum(critical[m].values()) for m in members]
        detected = sum(1 for total in totals if total >= 1)
        rows.append(CweRow(
            cwe_id=cwe.attrs["cwe_id"],
            files=len(members),
            detected_files=detected,
            detection_rate=detected / len(members) if members else 0.0,
            critical_errors=sum(totals),
        ))
    return sorted(rows, key=lambda row: row.cwe_id)


def top_cves(graph: VulnGraph, n: int) -> List[CveRank]:
    """CVEs by critical error count, descending; ties by CVE id"""
    if n < 1:
        raise ValueError("n must be at least 1")
    ranks = []
    for node_id, per_kind in _critical_by_cve(graph).items():
        ptr, external = per_kind[ErrorKind.PTR], per_kind[ErrorKind.EXTERNAL]
        ranks.append(CveRank(cve_id=graph.node(node_id).attrs["cve_id"], ptr=ptr, external=external,
                             total=ptr + external))
    ranks.sort(key=lambda rank: (-rank.total, rank.cve_id))
    return ranks[:n]
