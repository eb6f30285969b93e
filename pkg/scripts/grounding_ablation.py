"""Grounding-model input ablation on the affine generator: R2 for both / distance_only / pose_only."""

import argparse
import time

from impsim.grounding import AblationMode, train_grounding
from impsim.harness.synth import grounding_affine_dataset
from impsim.nncore import TrainSchedule, stage_rng


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--pose-weight", type=float, default=1.0,
                    help="how strongly the pose channel drives magnitude (0 makes the target pure path length)")
    args = ap.parse_args(argv)

    train, test = grounding_affine_dataset(seed=args.seed, pose_weight=args.pose_weight)
    print(f"{len(train)} train / {len(test)} test windows")
    for mode in AblationMode:
        t = time.time()
        _, rep = train_grounding(train, mode, TrainSchedule(max_epochs=args.epochs), stage_rng(args.seed, mode.value),
                                 test=test)
        r2 = rep["test_r2"]
        print(f"{mode.value:<14} R2 mean {r2['mean']:.4f} (magnitude {r2['magnitude']:.4f}, phase {r2['phase']:.4f})"
              f"  epochs {rep['epochs_run']}  {time.time() - t:.0f}s")


if __name__ == "__main__":
    main()
