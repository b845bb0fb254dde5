"""Reading FRED-style CSV files and building one estimation window.

The bundled test fixtures mimic the FRED-MD (monthly) and FRED-QD
(quarterly) layouts. The matched subset uses the quarterly transformation
codes at both frequencies.
"""
from pathlib import Path

from diffuse import ingest, synthetic

fixtures = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
md = ingest.parse_fred_csv(fixtures / "md_subset.csv", "monthly")
qd = ingest.parse_fred_csv(fixtures / "qd_subset.csv", "quarterly")
match = ingest.match_md_qd_subset(md, qd)
print(f"{len(match.pairs)} matched series, {len(match.overrides)} with differing codes")
for name, (code_m, code_q) in list(match.overrides.items())[:4]:
    print(f"  {name}: monthly code {code_m}, quarterly code {code_q}")

# Transform the synthetic monthly panel and cut one window for its first series.
raw = synthetic.load_fixture()
ds, dropped = ingest.transform_dataset(raw)
dw = ingest.build_design(ds, ds.names[0], h=1, window_end=200, window_len=60)
print(f"window rows {dw.rows[0]}..{dw.rows[-1]}, W is {dw.w.shape}, X is {dw.x.shape}")
print("first predictors:", dw.x_names[:4])
