"""Run the class-exclusion experiment end to end at toy scale.

One baseline plus one run per class: each run retrains the base model blind
to that class, fits a corrector that can see it, and scores the composed
model. The harness persists every run (model, corrector, predictions,
metrics) under one directory with a checksum manifest, and the whole tree
is a pure function of the master seed.
"""

import json
import tempfile
from pathlib import Path

from mclab.harness import normalize_config, run_sweep


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        config = normalize_config({
            "name": "toy",
            "seed": 11,
            "output_dir": tmp,
            "dataset": {"n_total": 600, "profile": {
                "proportions": [0.5, 0.3, 0.2],
                "names": ["A", "B", "C"],
                "close_pair": [0, 2],
                "close_distance": 6.0,
            }},
            "model": {"conv_channels": [2, 4, 8], "n_classes": 3},
            "train": {"max_epochs": 15, "patience": 5, "batch_size": 32,
                      "dropout_p": 0.1, "learning_rate": 0.05},
            "gbdt": {"n_rounds": 20, "max_depth": 3},
        })
        sweep = run_sweep(config, jobs=1)

        print(f"baseline val accuracy "
              f"{sweep.baseline.report.aggregate.accuracy_base:.3f}")
        for c in sorted(sweep.runs):
            rep = sweep.runs[c].report
            m = rep.per_class[c]
            print(f"excluded {c}: retention_macro "
                  f"{rep.aggregate.retention_macro:.3f}  excluded-class gain "
                  f"{m.gain:.3f}  base TPR {m.tpr_base:.3f}")

        root = Path(sweep.root)
        print("\nretention matrix (rows: true class, cols: excluded run):")
        print((root / "table3.txt").read_text())
        print("accuracy matrix with baseline column:")
        print((root / "table5.txt").read_text())

        manifest = json.loads((root / "manifest.json").read_text())
        n_files = sum(len(v) for v in manifest["runs"].values())
        print(f"manifest: {n_files} artifact files checksummed, config hash "
              f"{manifest['config_sha256'][:12]}..., master seed "
              f"{manifest['master_seed']}")
        print("re-running this script with the same seed reproduces every")
        print("file byte for byte, including with parallel workers.")


if __name__ == "__main__":
    main()
