"""The twelve segmentation measures on a pair of shifted squares."""
import numpy as np

from rarunet.metrics import boundary, evaluate, local_dice_map

gt = np.zeros((12, 12), bool)
gt[3:8, 3:8] = True
pred = np.zeros((12, 12), bool)
pred[4:9, 3:9] = True

print("boundary pixels of gt:", len(boundary(gt)))
print(evaluate(pred, gt).to_json())

# %% local Dice around every pixel, the ingredient of the boundary measures
print(np.round(local_dice_map(pred, gt)[2:10, 2:10], 2))

# %% an empty prediction: overlap measures are defined, distances are not
report = evaluate(np.zeros_like(gt), gt)
print({k: v for k, v in report.to_dict().items() if v is None})
