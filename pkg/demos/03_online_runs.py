"""
Online class-wise coverage with bandit feedback
===============================================

"""

from bccp import RunConfig, run_online, sweep_eta2

# A three-class Gaussian mixture streamed in batches of 256.
# Target: each class covered 90% of the time.
base = RunConfig(alpha=0.1, policy="uniform", eta1=0.05, T=50_000, score_log=False)

for algorithm in ("alg1", "alg2"):
    s = run_online(base.replace(algorithm=algorithm), seed=0)
    cvg = [s.scalars[f"cvg_{k}"] for k in (1, 2, 3)]
    print(f"{algorithm}: per-class coverage {[round(c, 3) for c in cvg]}, "
          f"mean set size {s.scalars['acum_size']:.3f}")

# The coverage curve for the expert ensemble, every 20th logged batch
s = run_online(base.replace(algorithm="alg2"), seed=0)
for i in range(0, len(s.series["step"]), 20):
    print("step %6d  min %.3f  max %.3f  size %.3f" % (
        s.series["step"][i], s.series["acum_cvg_min"][i],
        s.series["acum_cvg_max"][i], s.series["acum_size"][i]))

# One threshold learning rate at a time: larger rates enter the
# coverage band sooner
rows = sweep_eta2(base.replace(replications=2, T=30_000), grid=(0.1, 0.01, 0.001))
for r in rows:
    entry = r["band_entry_step"]
    print("eta2=%-6g band entry at %s, final size %.3f" % (
        r["eta2"], "never" if entry is None else int(entry), r["acum_size"]))
