"""
Memorizing four synthetic scans
===============================

Train the full model with its default hyperparameters on four small
synthetic scans until the object classes are segmented almost perfectly,
then print the IoU table and save the prediction of the first scan.

This takes a few minutes on one CPU core.  Pass a smaller step count as the
first argument for a quicker look.
"""

import sys
import tempfile
import time
from pathlib import Path

from rangeseg import GridConfig, SceneConfig, TrainConfig, evaluate, generate_dataset, train
from rangeseg.render import save_png

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out = Path(tempfile.mkdtemp(prefix="rangeseg_demo_"))

data = generate_dataset(4, SceneConfig(seed=0, grid=GridConfig.from_fov(64, 128)))

# With four samples and a batch of four, one epoch is one optimizer step.
start = time.perf_counter()


def progress(line):
    if line.startswith("epoch=") and int(line.split()[0][6:]) % 25 == 0:
        print(line, f"({time.perf_counter() - start:.0f}s)")


model, log = train(data, TrainConfig(epochs=steps), on_log=progress)
print("first loss %.1f, last loss %.1f" % (log.losses[0], log.losses[-1]))

# Evaluation runs in inference mode with the running batch-norm statistics.
report = evaluate(model, data)
print(report.table())

model.save(out / "overfit.ckpt")
save_png(data[0].image, out / "prediction.png", model.predict(data[0].image))
save_png(data[0].image, out / "ground_truth.png", data[0].labels)
print("checkpoint and renders in", out)
