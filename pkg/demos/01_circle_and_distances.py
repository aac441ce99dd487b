"""The emotion circle and the distances defined on it.

Twelve labels sit on evenly spaced slots of a circle, each tagged Positive,
Negative or Neutral. Every quantity the losses and metrics consume derives
from this layout: the angular gap, the step count, the circumplex distance
(a polarity constant plus the step count) and the target cosine.
"""

from ecmsphere import (
    angle_distance_steps,
    circumplex_distance,
    default_config,
    delta_theta,
    target_cosine,
)

cfg = default_config()

print(f"{cfg.E} labels:")
for lab in cfg.labels:
    degrees = lab.slot * 360 // cfg.E
    print(f"  {lab.name:<11s} slot {lab.slot:>2d} ({degrees:>3d} deg)  {lab.polarity.value}")

# Distances from "love" to everything else. Note how the polarity constant
# lifts cross-polarity pairs: "surprise" is only 3 steps away but Neutral,
# so its circumplex distance jumps by 2; "anger" is 4 steps and opposite
# polarity, so it jumps by 4.
print("\nfrom love:")
love = cfg.index_of("love")
for lab in cfg.labels:
    print(
        f"  to {lab.name:<11s} steps={angle_distance_steps(cfg, love, lab.index)}  "
        f"angle={delta_theta(cfg, love, lab.index):.3f} rad  "
        f"CD={circumplex_distance(cfg, love, lab.index):>4.1f}  "
        f"target cos={target_cosine(cfg, love, lab.index):+.3f}"
    )
