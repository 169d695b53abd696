"""The correction metric family on a small hand-checkable prediction log.

Every number here can be recomputed from set sizes by hand. The log pairs
a base prediction and a corrected prediction for each sample; the metrics
ask, class by class: of the samples the base got right, how many survived
correction (retention / harm), and of the ones it got wrong, how many were
rescued (gain)? Spill tracks false positives the corrector introduces.
"""

import numpy as np

from mclab.composer import NEW_CLASS
from mclab.metrics import (
    PairedPredictions, brute_force_oracle, evaluate, report_to_text,
)


def main() -> None:
    # class 0: four right, correction keeps three       -> retention 3/4
    # class 1: two right kept + one rescue from class 0 -> gain 1/2
    # class 2: base never right, one rescue             -> retention undefined
    # last sample: corrector flags it as outside every known class
    true_labels = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
    base_labels = [0, 0, 0, 0, 1, 1, 0, 0, 1, 0]
    corrected =   [0, 0, 0, 1, 1, 1, 1, 0, 2, NEW_CLASS]

    preds = PairedPredictions(
        true_labels=np.array(true_labels),
        base_labels=np.array(base_labels),
        corrected_labels=np.array(corrected),
        n_classes=3,
    )
    report = evaluate(preds)
    print(report_to_text(report))

    print("reading the table:")
    for m in report.per_class:
        ret = "undefined" if m.retention is None else f"{m.retention:.3f}"
        gain = "undefined" if m.gain is None else f"{m.gain:.3f}"
        n_right = int(round(m.tpr_base * m.count))
        print(f"  class {m.label}: base right on {n_right}/{m.count}, "
              f"retention {ret}, gain {gain}")
    print()
    print("retention and harm partition the base model's correct set, so")
    for m in report.per_class:
        if m.retention is not None:
            print(f"  class {m.label}: retention + harm = "
                  f"{m.retention + m.harm:.3f}")
    print()
    print(f"the flagged sample counts as wrong everywhere: new-class rate "
          f"{report.new_class_rate:.2f}, and it spills into no real class.")
    print(f"overall accuracy {report.aggregate.accuracy_base:.3f} -> "
          f"{report.aggregate.accuracy_corrected:.3f} "
          f"(P = {report.aggregate.power:.3f})")

    oracle = brute_force_oracle(preds)
    same = all(
        getattr(a, f) == getattr(b, f)
        for a, b in zip(report.per_class, oracle.per_class)
        for f in type(a).__dataclass_fields__
    )
    print(f"\nindependent set-counting oracle agrees exactly: {same}")


if __name__ == "__main__":
    main()
