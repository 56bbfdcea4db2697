"""The three architecture switches and what they cost in parameters.

Prints the seven switch combinations of the ablation table with their
parameter counts at the default width, then runs a toy-width model forward.
"""
import numpy as np

from rarunet.arch import ArchConfig, build_model, param_count, plan_parameters

rows = [
    ("plain U-Net", False, False, False),
    ("+ attention decoders", False, False, True),
    ("+ residual skips", False, True, False),
    ("+ residual encoders", True, False, False),
    ("encoders + attention", True, False, True),
    ("encoders + skips", True, True, False),
    ("all three", True, True, True),
]
for label, enc, skip, att in rows:
    cfg = ArchConfig(use_residual_encoders=enc, use_residual_skips=skip, use_attention_decoders=att)
    print(f"{label:24s} {param_count(cfg):>12,}")

# %% the alternative channel bookkeeping keeps every level at its nominal width
narrow = ArchConfig(encoder_concat="narrow", attention_transform="none")
print("narrow encoders, parameter-free gates:", f"{param_count(narrow):,}")

# %% where the parameters live
plan = plan_parameters(ArchConfig(base_channels=4))
by_block = {}
for name, p in plan.items():
    by_block[p.block] = by_block.get(p.block, 0) + int(np.prod(p.shape))
print({k: by_block[k] for k in sorted(by_block)})

# %% a forward pass at toy width
model = build_model(ArchConfig(base_channels=4), seed=0)
x = np.random.default_rng(1).random((2, 1, 32, 32)).astype(np.float32)
prob = model.predict(x)
print("output", prob.shape, "range", float(prob.min()), float(prob.max()))
