"""From synthetic data files to a solved run, through the command line."""

#%% generate data
import json
import tempfile
from pathlib import Path

from hocl.cli import main

work = Path(tempfile.mkdtemp(prefix="hocl-demo-"))
(work / "gen.json").write_text(json.dumps(
    {"d": 2, "m0": 200, "m1": 100, "m2": 100, "theta_true": [1.0, -0.5], "noise": 0.1, "seed": 7}))
main(["gen-data", "--config", str(work / "gen.json"), "--out", str(work / "data")])

#%% solve on the generated splits
(work / "run.json").write_text(json.dumps(
    {"train_path": "data/z1.csv", "valid_path": "data/z2.csv", "N": 50,
     "max_outer": 8000, "algorithm": "msa"}))
status = main(["solve", "--config", str(work / "run.json"), "--out", str(work / "run")])
print("exit status:", status)

#%% inspect the outputs
result = json.loads((work / "run" / "result.json").read_text())
print("theta(T):", [round(v, 4) for v in result["theta_final"]], "phi_gap:", round(result["phi_gap"], 6))
print((work / "run" / "trace.csv").read_text().splitlines()[0])
print("outputs in", work)
