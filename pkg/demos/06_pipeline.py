"""End to end through the command-line tool on a tiny synthetic set.

gen-synth -> corrupt -> train (with and without sample exclusion) -> eval.
Uses a temporary directory and a toy width so it finishes in about a minute.
"""
import json
import tempfile
from pathlib import Path

from rarunet.cli import main

root = Path(tempfile.mkdtemp(prefix="rarunet-demo-"))
manifest = root / "data" / "manifest.json"

main(["gen-synth", "--n", "100", "--size", "32", "--seed", "1", "--out", str(root / "data")])
main(["corrupt", "--manifest", str(manifest), "--beta", "0.5", "--alpha", "0.5", "--seed", "1"])

for adl in ("--adl", "--no-adl"):
    out = root / adl.strip("-")
    main(["train", "--manifest", str(manifest), "--base-channels", "4", "--epochs", "20", "--lr", "0.003",
          "--no-augment", adl, "--seed", "1", "--out", str(out)])
    summary = json.loads((out / "summary.json").read_text())
    print(adl, "excluded per epoch:", summary["excluded_counts"])
    main(["eval", "--checkpoint", str(out / "checkpoint.raru"), "--manifest", str(manifest),
          "--report", str(out / "report.json")])

print("artifacts in", root)
