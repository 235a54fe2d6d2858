"""prooftidy: objective-steered refactoring of Lean 4 proofs.

A strategy bank distilled from long/short proof pairs, embedding-backed
retrieval conditioned on the user's objective (length, compile time,
toolchain version), and a compiler-in-the-loop agent that plans, rewrites,
and debugs proofs with a frozen LLM behind a port.
"""

__version__ = "0.1.0"
