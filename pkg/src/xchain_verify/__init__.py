"""Simulate and exhaustively verify cross-chain protocols.

Modules: :mod:`automata` (interface automata), :mod:`task` (tasks and
utilities), :mod:`scheduler` (four-phase round execution),
:mod:`checker` (execution function and correctness verdicts),
:mod:`swap` (the two-party hashed-timelock swap), :mod:`scenario` and
:mod:`cli` (file format and command line).
"""

__version__ = "0.1.0"
