"""Disk-resident spatial index benchmark.

Eleven index variants (R-tree family, KD family, curve-packed trees and two
learned indices) over one 4 KB page store with logical I/O counters, the
query algorithms that run on all of them, the trainers for the learned build
decisions, and a workload runner with CLI.
"""

__version__ = "0.1.0"
