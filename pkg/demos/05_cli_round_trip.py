# The same workflow through the command line entry point.
import sys
import tempfile
from pathlib import Path

from naima.cli import main

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp())
small = ["--set", "model.channels=16", "--set", "model.reduction=4", "--set", "model.rcab_per_level=1",
         "--set", "model.rgb_blocks_per_level=1", "--set", "model.head_rcabs=1"]


def naima(*args):
    argv = [str(a) for a in args]
    print("$ naima", " ".join(argv))
    code = main(argv)
    print("exit", code)
    return code


naima("synth", "--count", 3, "--size", 56, "--scale", 4, "--out", work / "data")
naima("synth", "--count", 2, "--size", 56, "--scale", 4, "--seed", 1, "--out", work / "data", "--split", "test")
naima("train", "--data", work / "data", "--epochs", 3, "--lr", 1e-3, "--out", work / "run", *small)
naima("eval", "--checkpoint", work / "run" / "checkpoint.ckpt", "--data", work / "data",
      "--out", work / "eval", "--error-maps", "--baseline")
naima("viz", "--checkpoint", work / "run" / "checkpoint.ckpt", "--data", work / "data",
      "--sample", "synth_00000", "--out", work / "viz")
naima("synth", "--count", 1, "--size", 57, "--out", work / "bad")
print((work / "eval" / "report.csv").read_text())
