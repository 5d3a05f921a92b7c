"""The four-variant comparison over a few seeds.

Each seed draws a fresh dataset and trains full, no-hb, no-ta and the
network-blind features-only control. Pass a seed count as the first argument
(default 3; the acceptance suite uses 10).
"""

import sys

from hyperite import GeneratorConfig, TrainConfig, run_benchmark
from hyperite.evaluation import NOT_REPRODUCIBLE, format_table

seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
reports, _ = run_benchmark(GeneratorConfig(n=300, m=3, k=1.0), TrainConfig(), seeds=range(seeds))
print(format_table(reports))
print()
print(NOT_REPRODUCIBLE)
