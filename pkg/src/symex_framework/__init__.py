"""
Symbolic execution toolkit for Rust CVE snippets: FFI wrappers, KLEE harnesses and vulnerability graphs
"""

__version__ = "1.0.0"
__author__ = "Symex ToolKit"
