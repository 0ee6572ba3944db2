"""
Learning-rate schedules
=======================

The polynomial schedule ``l0 * (1 - (e - e_s) / (e_f - e_s)) ** rho`` spends
more or less of the budget at a high rate depending on rho.  The named
presets cover step decay, exponential decay, stage-wise and step-wise linear
decay.
"""

import sys
from pathlib import Path

from gcpool.optim import PRESETS, ScheduleSpec, lr_at
from gcpool.svg import line_chart

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo-schedules")
out.mkdir(parents=True, exist_ok=True)

curves = {}
for rho, e_f in ((2, 50), (5, 50), (11, 53)):
    spec = ScheduleSpec("polynomial", l0=0.1, e_start=1, e_final=e_f, power=rho)
    epochs = list(range(1, 61))
    curves[f"{rho}-{e_f}"] = (epochs, [lr_at(spec, e) for e in epochs])
(out / "polynomial.svg").write_text(line_chart(curves, "polynomial decay", "epoch", "lr"))

for name, spec in PRESETS.items():
    first = spec.first_epoch
    print(f"{name:18s} e={first}: {lr_at(spec, first):.4g}   e={first + 40}: "
          f"{lr_at(spec, first + 40):.4g}")

# The stage-wise schedule restarts each stage from a fresh rate.
mob = PRESETS["mobilenetv2-adju"]
print("stage boundary:", lr_at(mob, 49), "->", lr_at(mob, 50))
