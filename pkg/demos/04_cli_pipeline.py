"""
The command-line pipeline on the packaged example
=================================================

prep -> cluster -> select -> regress, all driven by one INI file. The same
steps from a shell:

    tfkm prep    --config example.ini --output out
    tfkm cluster --config example.ini --output out
    tfkm select  --config example.ini --output out
    tfkm regress --config example.ini --output out --assignments out/assignments.csv
"""
import csv
import os
import sys
import tempfile
from importlib import resources

from tfkm.cli import main

config = str(resources.files("tfkm") / "data" / "example.ini")
out = tempfile.mkdtemp(prefix="tfkm-")

for cmd in ("prep", "cluster", "select"):
    if main([cmd, "--config", config, "--output", out]):
        sys.exit(f"{cmd} failed")
if main(["regress", "--config", config, "--output", out,
         "--assignments", os.path.join(out, "assignments.csv")]):
    sys.exit("regress failed")

print("outputs in", out)
for name in sorted(os.listdir(out)):
    print("  ", name)

with open(os.path.join(out, "assignments.csv"), newline="") as fh:
    rows = list(csv.DictReader(fh))
print("outliers flagged:", sum(r["cluster"] == "OUTLIER" for r in rows))

with open(os.path.join(out, "selection_summary.csv")) as fh:
    print(fh.read())
with open(os.path.join(out, "tables.txt")) as fh:
    print(fh.read())
