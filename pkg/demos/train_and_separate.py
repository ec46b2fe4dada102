"""
Train, separate and score a tiny model
======================================

Runs the three main commands back to back on the synthetic dataset from
``make_tiny_dataset.py``. Takes a couple of minutes on one CPU core.

    python3 demos/train_and_separate.py [work_dir]
"""
import json
import subprocess
import sys
import tempfile
from pathlib import Path

from waveunet.cli import main

here = Path(__file__).resolve().parent
work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="waveunet-demo-"))
data = work / "data"

# Three tracks: two for training and one held out for validation.
subprocess.run([sys.executable, str(here / "make_tiny_dataset.py"), str(data)], check=True)

# Reuse the shipped tiny config but point it at the fresh data.
config = json.loads((here.parent / "configs" / "tiny.json").read_text())
config["dataset_dir"] = str(data)
(work / "tiny.json").write_text(json.dumps(config, indent=2))

run = work / "run"
assert main(["train", "--config", str(work / "tiny.json"), "--out", str(run)]) == 0
print((run / "train_log.csv").read_text())

# Separation writes one WAV per source, each as long as the input.
assert main(["separate", "--checkpoint", str(run / "best.ckpt"),
             "--input", str(data / "synth02" / "mixture.wav"), "--out", str(work / "sep")]) == 0
print(sorted(p.name for p in (work / "sep").glob("*.wav")))

# Segment-wise SDR over the whole dataset, training tracks included.
assert main(["evaluate", "--checkpoint", str(run / "best.ckpt"), "--dataset", str(data), "--out", str(work / "eval")]) == 0
print("artifacts in", work)
