"""
Driving the toolkit from the command line
=========================================

Writes a small dataset, schema and JSON config into a scratch directory and
runs each ``fedtab`` subcommand in turn, as a shell user would with
``fedtab partition --config run/config.json`` and so on.
"""
from __future__ import annotations

import json
import tempfile
from pathlib import Path

from fedtab import cli
from fedtab.fixtures import three_class_table

root = Path(tempfile.mkdtemp(prefix="fedtab-demo-"))
table = three_class_table(2000, seed=0, separation=2.5)
(root / "data.csv").write_text(table.to_csv())
(root / "schema.json").write_text(json.dumps(table.schema.to_dict(), indent=2))
(root / "config.json").write_text(json.dumps({
    "data": "data.csv",
    "schema": "schema.json",
    "output_dir": "out",
    "seed": 0,
    "partition": {"num_clients": 5, "beta": 0.05},
    "dp": {"epsilon": None, "delta": 1e-4},
    "train": {"rounds": 50},
}, indent=2))
config = str(root / "config.json")

for command in ("partition", "fit", "synthesize", "evaluate"):
    code = cli.main([command, "--config", config])
    print(f"  -> exit code {code}")

print("outputs in", root / "out")
for path in sorted((root / "out").rglob("*")):
    if path.is_file():
        print(f"  {path.relative_to(root / 'out')}  ({path.stat().st_size} bytes)")

##############################################################################
# A missing input is reported with the phase it broke and exit code 2.
(root / "bad.json").write_text(json.dumps({"data": "data.csv", "schema": "missing.json"}))
print("exit code with a missing schema:", cli.main(["fit", "--config", str(root / "bad.json")]))
