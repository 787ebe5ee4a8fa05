"""
The megcn command line
======================

Generate a dataset, train, evaluate with a confusion matrix, inspect
activation scores and run the gradient suite, all through `megcn`.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

here = Path(__file__).parent


def megcn(*args):
    cmd = [sys.executable, "-m", "megcn", *map(str, args)]
    print("$ megcn", " ".join(map(str, args)))
    done = subprocess.run(cmd, capture_output=True, text=True)
    print(done.stdout + done.stderr, end="")
    print("exit", done.returncode, "\n")
    return done.returncode


with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    megcn("synth", "--out", tmp / "train", "--per-class", 16, "--frames", 32, "--joints", 10, "--seed", 0)
    megcn("synth", "--out", tmp / "val", "--per-class", 16, "--frames", 32, "--joints", 10, "--seed", 1)
    megcn("train", "--config", here / "desk.cfg", "--data", tmp / "train", "--val", tmp / "val",
          "--variant", "me_gcn", "--out", tmp / "run", "--seed", 0)
    megcn("eval", "--checkpoint", tmp / "run" / "best.ckpt", "--data", tmp / "val", "--confusion", tmp / "cm.csv")
    print((tmp / "cm.csv").read_text())
    megcn("inspect", "--checkpoint", tmp / "run" / "best.ckpt", "--sample", tmp / "val" / "c2_0000.skl",
          "--scores", tmp / "scores.csv")
    print((tmp / "scores.csv").read_text())
    megcn("train", "--data", tmp / "train", "--out", tmp / "bad", "--set", "learning_rate=0.1")
    megcn("gradcheck", "--tolerance", "1e-4")
