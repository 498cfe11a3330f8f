"""
MCP Server exposing the KLEE error parser, replay, harness generation and graph queries
"""

import asyncio
import json
from pathlib import Path
from typing import Any, Dict, List

import structlog
from mcp.server import NotificationOptions, Server
from mcp.server.models import InitializationOptions
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool

from . import __version__
from .agents.pipeline import MAX_HARNESS_FUNCTIONS, replay_output_dir
from .config import DEFAULT_CONFIDENCE_WEIGHTS
from .error_parser import KleeErrorParser, render_error_record
from .errors import SymexError
from .harness_codegen import generate_harness
from .models import CveIdentity, ErrorKind, HarnessSpec, model_to_jsonable
from .report import cwe_table, top_cves_table
from .snippet_ingest import identity_from_name
from .vuln_graph import cves_sharing_pattern, errors_by_cwe, import_jsonld, top_cves
from .wrapper_forge import fallback_wrapper, validate_wrapper

logger = structlog.get_logger(__name__)

SERVER_NAME = "symex-pipeline"
GRAPH_QUERIES = ("errors-by-cwe", "top-cves", "sharing")


def _text(text: str) -> List[TextContent]:
    return [TextContent(type="text", text=text)]


def _json(data: Any) -> List[TextContent]:
    return _text(json.dumps(data, indent=2, sort_keys=True, default=str))


class SymexMCPServer:
    """MCP Server for KLEE result analysis over Rust CVE snippets"""

    def __init__(self):
        self.server = Server(SERVER_NAME)
        self.parser = KleeErrorParser()
        self._setup_handlers()

    def _setup_handlers(self):
        @self.server.list_tools()
        async def handle_list_tools() -> List[Tool]:
            return self.list_tools()

        @self.server.call_tool()
        async def handle_call_tool(name: str, arguments: Dict[str, Any]) -> List[TextContent]:
            return await self.call_tool(name, arguments)

    def list_tools(self) -> List[Tool]:
        return [
            Tool(
                name="parse_klee_error",
                description="Parse the text of a KLEE testNNNNNN.<kind>.err file into a structured record",
                inputSchema={
                    "type": "object",
                    "properties": {
                        "text": {"type": "string", "description": "Error file contents"},
                        "kind": {
                            "type": "string",
                            "enum": [k.value for k in ErrorKind],
                            "description": "Kind taken from the file suffix",
                        },
                        "test_id": {"type": "string", "default": "test000001"},
                    },
                    "required": ["text", "kind"],
                },
            ),
            Tool(
                name="replay_klee_output",
                description="Scan a recorded KLEE output directory and report its criticality summary",
                inputSchema={
                    "type": "object",
                    "properties": {
                        "output_dir": {"type": "string", "description": "Path to a klee-out directory"},
                        "cve_id": {"type": "string", "description": "Defaults to the directory name"},
                        "cwe_id": {"type": "integer"},
                    },
                    "required": ["output_dir"],
                },
            ),
            Tool(
                name="generate_harness",
                description="Generate a KLEE C harness from a Rust FFI wrapper, or from the CWE fallback template",
                inputSchema={
                    "type": "object",
                    "properties": {
                        "wrapper_source": {"type": "string"},
                        "cwe_id": {"type": "integer"},
                        "buffer_bytes": {"type": "integer", "default": 128},
                        "index_bound": {"type": "integer", "default": 10000},
                    },
                },
            ),
            Tool(
                name="get_fallback_wrapper",
                description="Return the fallback Rust wrapper template for a CWE id",
                inputSchema={
                    "type": "object",
                    "properties": {"cwe_id": {"type": "integer"}},
                    "required": ["cwe_id"],
                },
            ),
            Tool(
                name="query_graph",
                description="Query a vulnerability graph JSON-LD file",
                inputSchema={
                    "type": "object",
                    "properties": {
                        "graph_path": {"type": "string"},
                        "query": {"type": "string", "enum": list(GRAPH_QUERIES)},
                        "n": {"type": "integer", "default": 10},
                        "cve_id": {"type": "string", "description": "Required for 'sharing'"},
                    },
                    "required": ["graph_path", "query"],
                },
            ),
        ]

    async def call_tool(self, name: str, arguments: Dict[str, Any]) -> List[TextContent]:
        handlers = {
            "parse_klee_error": self._handle_parse_klee_error,
            "replay_klee_output": self._handle_replay_klee_output,
            "generate_harness": self._handle_generate_harness,
            "get_fallback_wrapper": self._handle_get_fallback_wrapper,
            "query_graph": self._handle_query_graph,
        }
        handler = handlers.get(name)
        if handler is None:
            return _text(f"Unknown tool: {name}")
        try:
            return await handler(arguments or {})
        except (SymexError, ValueError, KeyError, OSError) as e:
            logger.warning("tool_failed", tool=name, error=str(e))
            return _text(f"Error executing tool {name}: {e}")

    async def _handle_parse_klee_error(self, arguments: Dict[str, Any]) -> List[TextContent]:
        text = arguments.get("text", "")
        if not text:
            return _text("Error: text is required")
        record = self.parser.parse_error_file(
            text, ErrorKind(arguments["kind"]), arguments.get("test_id", "test000001")
        )
        return _json({"record": model_to_jsonable(record), "rendered": render_error_record(record)})

    async def _handle_replay_klee_output(self, arguments: Dict[str, Any]) -> List[TextContent]:
        output_dir = Path(arguments["output_dir"])
        identity = identity_from_name(output_dir.name)
        if "cve_id" in arguments:
            identity = CveIdentity(
                cve_id=arguments["cve_id"],
                cwe_id=arguments.get("cwe_id") or (identity.cwe_id if identity else 0),
            )
        if identity is None:
            return _text(f"Error: cannot infer a CVE id from '{output_dir.name}'; pass cve_id and cwe_id")
        outcome = replay_output_dir(identity, output_dir, DEFAULT_CONFIDENCE_WEIGHTS)
        return _json(model_to_jsonable(outcome.report))

    async def _handle_generate_harness(self, arguments: Dict[str, Any]) -> List[TextContent]:
        if arguments.get("wrapper_source"):
            signatures = validate_wrapper(arguments["wrapper_source"])
        elif arguments.get("cwe_id") is not None:
            signatures = fallback_wrapper(int(arguments["cwe_id"])).exported_functions
        else:
            return _text("Error: wrapper_source or cwe_id is required")
        spec = HarnessSpec(
            signatures=signatures[:MAX_HARNESS_FUNCTIONS],
            buffer_bytes=arguments.get("buffer_bytes", 128),
            index_bound=arguments.get("index_bound", 10000),
        )
        return _text(generate_harness(spec).text)

    async def _handle_get_fallback_wrapper(self, arguments: Dict[str, Any]) -> List[TextContent]:
        return _text(fallback_wrapper(int(arguments["cwe_id"])).source_text)

    async def _handle_query_graph(self, arguments: Dict[str, Any]) -> List[TextContent]:
        query = arguments["query"]
        if query not in GRAPH_QUERIES:
            return _text(f"Error: unknown query '{query}'")
        document = json.loads(Path(arguments["graph_path"]).read_text(encoding="utf-8"))
        graph = import_jsonld(document)
        if query == "errors-by-cwe":
            return _text(cwe_table(errors_by_cwe(graph)))
        if query == "top-cves":
            return _text(top_cves_table(top_cves(graph, int(arguments.get("n", 10)))))
        cve_id = arguments.get("cve_id")
        if not cve_id:
            return _text("Error: cve_id is required for 'sharing'")
        return _json([{"cve_id": other, "weight": weight} for other, weight in cves_sharing_pattern(graph, cve_id)])

    async def run(self):
        async with stdio_server() as (read_stream, write_stream):
            await self.server.run(
                read_stream,
                write_stream,
                InitializationOptions(
                    server_name=SERVER_NAME,
                    server_version=__version__,
                    capabilities=self.server.get_capabilities(
                        notification_options=NotificationOptions(),
                        experimental_capabilities={},
                    ),
                ),
            )


async def main():
    server = SymexMCPServer()
    await server.run()


def run_server() -> None:
    """Console-script entry point"""
    asyncio.run(main())


if __name__ == "__main__":
    run_server()
