"""How many high-loss samples are held out each epoch.

Tabulates the exclusion count over 50 epochs for a few noise settings, and
shows the ranking rule on a hand-made loss ledger.
"""
from rarunet.adl import LossLedger, rank_and_exclude, schedule_n

x, y = 50, 900
print("epoch " + " ".join(f"a={a} b={b}".rjust(12) for a, b in [(0.68, 0.75), (0.77, 0.5), (0.85, 0.25)]))
for t in (1, 2, 3, 4, 5, 6, 7, 10, 25, 50):
    counts = [schedule_n(t, a, b, x, y) for a, b in [(0.68, 0.75), (0.77, 0.5), (0.85, 0.25)]]
    print(f"{t:5d} " + " ".join(f"{c:12d}" for c in counts))

# %% clean labels switch the mechanism off entirely
print("alpha = 1:", {schedule_n(t, 1.0, 0.5, x, y) for t in range(1, x + 1)})

# %% ranking: highest previous-epoch loss first, smaller id wins ties
ledger = LossLedger([0, 1, 2, 3])
for sid, loss in enumerate([0.2, 0.7, 0.7, 0.1]):
    ledger.record(1, sid, loss, excluded=False)
print("exclude 1 at epoch 2:", rank_and_exclude(ledger, 2, 1))
print("exclude 3 at epoch 2:", sorted(rank_and_exclude(ledger, 2, 3)))
