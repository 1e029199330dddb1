# %% [markdown]
# # Experiment grids and drop tables
#
# A preset expands into every (method, channel) pair it needs, including the
# ideal-channel anchor of each method, and runs them for several seeds in a
# worker pool. The summary reports the median final reward and the signed
# change against the method's own anchor.
#
# The same thing from a shell:
#
#     python -m hr3l preset ge925 --seeds 5 --out runs/ge925
#     python -m hr3l summarize runs/ge925
#     python -m hr3l run my_experiment.ini
#
# Without `--out`, results go under `$HR3L_OUT` (default `runs`).

# %%
import tempfile
from pathlib import Path

from hr3l.config import parse_config
from hr3l.experiments import preset_configs, run_preset

for cfg in preset_configs("delay2"):
    print(cfg.method, cfg.channel)

# %% [markdown]
# A tiny base configuration so the grid finishes in seconds; the numbers
# are meaningless at this size, the plumbing is the point.

# %%
base = parse_config(
    """
    rounds = 2
    steps_per_round = 500
    [transmitter]
    n_features = 16
    hidden = 32, 32
    n_epochs = 10
    [receiver]
    hidden = 32, 32
    """
)
out = Path(tempfile.mkdtemp())
summary = run_preset("ge925", seeds=3, out_dir=out, base=base, workers=1)
print(summary.format())
print(sorted(p.relative_to(out).as_posix() for p in out.rglob("*.csv"))[:4])
