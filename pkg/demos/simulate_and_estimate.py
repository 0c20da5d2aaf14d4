"""Simulate a small experiment, then estimate treatment effects by platform.

Uses the panel-only mode, which produces the same panel as the closed loop
without serving every feed request.
"""
from prosocial_ranking.analysis import AnalysisConfig, EstimateSpec, analyze, estimate_twfe
from prosocial_ranking.simulator import SimConfig, run

cfg = SimConfig(n_users=600, n_days=90)
res = run(cfg, seed=3, mode="panel_only")
print(res.summary())
print(res.panel.head())

# pooled estimate of the effect on daily active minutes, one platform at a time
for platform in ("Facebook", "Twitter", "Reddit"):
    r = estimate_twfe(res.panel, EstimateSpec("active_minutes", platform=platform))
    print(f"{platform:9s} beta={r.beta: .3f}  se={r.se:.3f}  lags={r.lags}")

print(r.summary())

# the full pipeline: behavior by arm, survey indices and attrition models
out = analyze(res.panel, res.surveys, res.roster, AnalysisConfig(moderators=()))
for name, table in out.tables.items():
    print(name, table.shape)
print(out.tables["survey"][["model", "coef", "se", "p"]])
