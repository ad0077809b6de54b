"""
Which parts of the labeler matter
=================================

Run the ablation grid on a small seeded suite of noisy scenes and print one
line per configuration. The full suite used by the tests has 50 scenes; ten
are enough to see the ordering.
"""

import sys

from flowlabel.ablation import ablation_grid, run_ablation
from flowlabel.synth import generate, suite_specs

count = int(sys.argv[1]) if len(sys.argv) > 1 else 10
scenes = [generate(s) for s in suite_specs(count)]

# %%
# Matching rows score labels straight out of the matcher. The refinement
# and walk-step rows start from the transport labels with all measures.
for result in run_ablation(scenes, ablation_grid()):
    print(result.line())
