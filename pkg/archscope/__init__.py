"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Architecture Performance Predictors
===============================================
Few-shot accuracy and latency predictors for neural architecture search,
built on search-space independent encodings (zero-cost proxies, hardware
latencies) with transfer across devices, spaces and tasks.
"""

VERSION = "1.0.0"
