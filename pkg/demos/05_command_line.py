"""The batch front end, driven from Python in a scratch directory.

The same steps from a shell::

    kxcrc synth --out data --set synth.n_identities=60
    kxcrc tune  -c run.json
    kxcrc eval  -c run.json --set lambda_from=results/tune.json
    kxcrc rank  -c run.json --probe-index 0

Run: python3 demos/05_command_line.py
"""
import json
import tempfile
from pathlib import Path

from kxcrc.cli import main

work = Path(tempfile.mkdtemp(prefix="kxcrc-"))
main(["synth", "--out", str(work / "data"), "--set", "synth.n_identities=60",
      "--set", "synth.n_distractors=10"])

run = {
    "dataset": {"manifest": "data/manifest.json"},
    "method": {"name": "kernel_xcrc", "kernel": {"kind": "rbf", "bandwidth": "auto"}},
    "lambda_grid": [1.05, 1.2, 1.5, 2.0, 3.0],
    "tuning_seed": 100,
    "trials": 5,
    "output_dir": str(work / "results"),
}
(work / "run.json").write_text(json.dumps(run, indent=2))

main(["tune", "-c", str(work / "run.json")])
main(["eval", "-c", str(work / "run.json"), "--set", f"lambda_from={work / 'results' / 'tune.json'}",
      "--threads", "1"])
print((work / "results" / "cmc.csv").read_text().splitlines()[:4])
main(["rank", "-c", str(work / "run.json"), "--probe-index", "0"])
print("outputs in", work)
