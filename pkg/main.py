#!/usr/bin/env python3
"""
Symex ToolKit - Main Entry Point
MCP Server for KLEE result analysis over Rust CVE snippets
"""

import asyncio
import sys
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from symex_framework.mcp_server import main

if __name__ == "__main__":
    asyncio.run(main())
