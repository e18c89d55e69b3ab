"""
Training a small localizer end to end
=====================================

Pairs every left person with every right detection, trains the network
for a few epochs and localizes the validation people. Small on purpose:
it runs in well under a minute. The acceptance tests use 2000 frames and
300 epochs.
"""

import numpy as np

from stereoloc.evaluation import evaluate
from stereoloc.geometry import KITTI_RIG
from stereoloc.inference import predict_frames
from stereoloc.synth import SceneConfig, dataset_split, generate_frames
from stereoloc.training import TrainConfig, evaluation_pairs, train, training_pairs

frames = generate_frames(SceneConfig(), 400, seed=0)
train_frames, val_frames = dataset_split(frames, (0.8, 0.2), seed=0)

# balanced true/false pairs, plus null pairs for people with no right partner
pairs = training_pairs(train_frames, seed=0)
print(f"{len(pairs)} training pairs, {sum(p.ism_label for p in pairs)} true")

config = TrainConfig(epochs=20, batch_size=128, hidden=128)
result = train(pairs, evaluation_pairs(val_frames), KITTI_RIG, config,
               progress=lambda row: print(f"epoch {row['epoch']:3d}  loss {row['train_total']:.3f}  "
                                          f"match acc {row['val_ism_bal_acc']:.3f}")
               if row["epoch"] % 5 == 0 else None)

# one localization per left person, with a +-b interval
locs = predict_frames(val_frames, result.network)
for loc in locs[:5]:
    print(f"frame {loc.frame_id} person {loc.left_instance_id}: r = {loc.spherical.r:5.1f} "
          f"+- {loc.interval_halfwidth:.1f} m ({loc.mode_flag})")

report = evaluate(locs, val_frames)
all_ = report["difficulty"]["all"]
print(f"ALE {all_['ale']:.2f} m, coverage {all_['coverage']:.2f}, "
      f"interval size {100 * all_['interval_size']:.1f}% of distance")
print("ALE by bin:", {k: None if v["ale"] is None else round(v["ale"], 2) for k, v in report["bins"].items()})
print(f"stereo/mono decision accuracy {report['ism_accuracy']:.3f}")
assert np.isfinite(all_["ale"])
