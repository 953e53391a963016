"""Attack both quality regressors with FGSM and compare how fast their error grows.

    python demos/fgsm_robustness_sweep.py [run_dir]

With a run directory produced by ``segqa run`` the trained checkpoints are
reused. Without one, a tiny run is trained first (well under a minute).
At that toy scale the ordering between the two methods is not stable, so
point the script at a default ``segqa run`` directory for meaningful curves.
"""

import json
import sys
import tempfile
from pathlib import Path

from segqa import attack, cli, evaluation, models
from segqa.data import DatasetManifest, load_samples

if len(sys.argv) > 1:
    run = Path(sys.argv[1])
else:
    run = Path(tempfile.mkdtemp(prefix="segqa-sweep-"))
    cfg = run / "tiny.json"
    cfg.write_text(json.dumps({
        "data": {"count": 150, "image_size": 32,
                 "corpus": {"bins": 5, "per_bin": {"train": 40, "val": 10, "test": 12}}},
        "models": {"recnet": {"depth": 3, "base_width": 8},
                   "regnet": {"widths": [8, 16, 16, 16, 16], "hidden": [32, 16]}},
        "train": {"recnet": {"epochs": 15, "learning_rate": 0.003},
                  "regnet": {"epochs": 20, "learning_rate": 0.002}},
    }))
    for step in ("synth", "corpus", "train-rec", "train-reg"):
        assert cli.main([step, "--config", str(cfg), "--out", str(run)]) == 0

corpus = DatasetManifest.load(run / "corpus" / "manifest.json")
test = load_samples(corpus, "test")
recnet = models.load_model(run / "recnet" / "best")
pipelines = {
    "baseline": attack.Pipeline(models.load_model(run / "regnet_baseline" / "best"), name="baseline"),
    "proposed": attack.Pipeline(models.load_model(run / "regnet_proposed" / "best"), recnet, name="proposed"),
}

# One gradient per slice, reused for every epsilon. The baseline is attacked
# on its image input; the proposed pipeline on its image input (gradient flows
# through the reconstruction network) and directly on its difference image.
tables = []
for mode, surface in (("baseline", "input_image"), ("proposed", "input_image"),
                      ("proposed", "difference_image")):
    tables.append(attack.sweep(pipelines[mode], test, attack.AttackConfig(surface=surface)))

report = evaluation.build_report(tables)
print(report.to_markdown())
for (method, surface), pts in sorted(report.curves().items()):
    print(f"{method:>8} / {surface:<16} MAE rises by {pts[-1][1] - pts[0][1]:+.3f} from eps=0 to eps={pts[-1][0]}")
