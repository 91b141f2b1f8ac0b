"""Parameter and MAC accounting, before and after fusion.

Counts the default full-scale config at 640x640, fuses it, and shows that
the saved parameters equal the closed-form sum over units of (small-branch
kernel parameters + batch-norm parameters - the bias the fused conv gains).
"""

from mafnet import RepHDWConv, build_model, count_costs, fuse_model, ghks_kernels, nano_config

model = build_model(nano_config())
report = count_costs(model, 640)
print(f"train-path: {report.total_params / 1e6:.2f}M params, {report.flops / 1e9:.2f}G FLOPs")
print("kernel schedule:", ghks_kernels(model))

model.eval()
units = fuse_model(model)
fused = count_costs(model, 640)
print(f"fused path ({units} units merged): "
      f"{fused.total_params / 1e6:.2f}M params, {fused.flops / 1e9:.2f}G FLOPs")

delta = report.total_params - fused.total_params
closed_form = 0
for m in model.modules():
    if isinstance(m, RepHDWConv):
        c = m.channels
        closed_form += c * sum(k * k for k in m.small_kernels) + 2 * c * (
            1 + len(m.small_kernels)
        ) - c
print(f"parameter delta {delta} == closed form {closed_form}: {delta == closed_form}")

print("\nheaviest ten layers at 640x640:")
for row in sorted(report.rows, key=lambda r: -r.macs)[:10]:
    print(f"  {row.name:42s} {row.kind:8s} {row.params:>8d} params {row.macs:>12d} MACs")
