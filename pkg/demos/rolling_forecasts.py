"""Rolling-window forecasts on the shipped synthetic panel.

For a handful of target series this compares PCA and ridge in a short and
a long window. Hyperparameters are re-chosen at every origin from the
squared errors already realised; losses are compared with the
Diebold-Mariano statistic (positive values favour ridge). With a dozen
targets the win rates are noisy; the shift toward PCA in short windows
shows up over all 128 series and a longer evaluation sample.
"""
from diffuse import empirical, ingest, synthetic

ds, _ = ingest.transform_dataset(synthetic.load_fixture())
lengths = empirical.window_lengths(len(ds.names) + 1, (1 / 3, 7 / 6))
cfg = empirical.EmpiricalConfig(
    h=1,
    window_lengths=lengths,
    forecast_start=160,
    eval_start=260,
    targets=tuple(ds.names[:12]),
    max_factors=20,
)
res = empirical.run_empirical(ds, cfg)
for wl in lengths:
    rep = res.reports[wl]
    dm = rep.dm_pair("ridge", "pca")
    print(f"T={wl}: PCA beats ridge for {res.win_rate(wl):.0f}% of targets, median DM {sorted(dm.values())[len(dm) // 2]:+.2f}")
shift = res.shifts["ridge|pca"]
print("DM change from short to long window:", {k: round(v, 2) for k, v in list(shift.items())[:4]})
