"""End-to-end segmentation through the command line interface.

Run: python demos/06_pipeline_cli.py [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

from nucleoseg.cli import main

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
spec = work / "spec.toml"
spec.write_text("dims = [64, 64, 48]\ncount = [4, 6]\nseed = 7\n")

assert main(["synth", "--spec", str(spec), "--out", str(work)]) == 0
assert main([
    "segment", "--input", str(work / "volume.tif"), "--truth", str(work / "truth.tif"),
    "--out", str(work / "seg"),
]) == 0
assert main([
    "overlay", "--input", str(work / "volume.tif"), "--labels", str(work / "seg" / "labels.tif"),
    "--out", str(work / "overlay"),
]) == 0

report = json.loads((work / "seg" / "report.json").read_text())
print(f"outputs in {work}")
for name in ("dice", "hausdorff"):
    agg = report["aggregates"][name]
    print(f"  mean {name} {agg['mean']:.3f} over {agg['n']} nuclei")
print(f"  rand index {report['rand_index']:.4f}")
print(f"  {len(list((work / 'overlay').glob('*.png')))} overlay slices")
