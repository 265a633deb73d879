"""Weight-only structured adapters and a two-task continual-learning bench.

Layer map:

* ``numerics`` — dense linear algebra and seeded randomness,
* ``selector`` — redundant-output-row selection,
* ``basis`` — low-energy input bases (dense and randomized paths),
* ``adapters`` — structured / LoRA / full / frozen per-layer adapters,
* ``model`` — small MLPs with manual backprop, losses, optimizers,
* ``geometry`` — forgetting, drift radius, restricted curvature,
  bound checks, Jacobian drift fields,
* ``bench`` — task generators and the two-task protocol runner,
* ``cli`` — the ``plate`` command-line entry point.
"""

__version__ = "0.1.0"
