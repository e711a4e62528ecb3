"""
Counting what crosses the wire
==============================

Every message between clients and server is logged with its scalar count.
The totals are set next to the closed-form cost model evaluated on the same
run's dimensions.
"""
from __future__ import annotations

import json

from fedtab.config import PipelineConfig
from fedtab.fixtures import clinical_table
from fedtab.ledger import CommLedger
from fedtab.pipeline import closed_form_report, fit_statistics, partition

config = PipelineConfig(num_clients=5, seed=0)
shards, _ = partition(clinical_table(2000, seed=0), config)
ledger = CommLedger()
art = fit_statistics(shards, config, ledger)
report = closed_form_report(art, ledger)

print("run dimensions:", json.dumps(report["parameters"]))
for direction in ("upload", "download"):
    print(direction)
    for phase, predicted in report["closed_form"][direction].items():
        print(f"  {phase:22s} measured {report['measured'][direction][phase]:>8}"
              f"  formula {predicted:>10g}")
    print(f"  {'modelled total':22s} measured {report['measured_modelled_total'][direction]:>8}"
          f"  formula {report['closed_form'][direction + '_total']:>10g}")
    print(f"  {'grand total':22s} measured {report['measured_grand_total'][direction]:>8}")

##############################################################################
# The grand totals also include the min/max exchange that fixes each column's
# scaling and the final posterior broadcast, neither of which the model counts.
