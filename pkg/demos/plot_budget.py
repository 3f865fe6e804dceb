"""
Where the parameters and FLOPs go
=================================

Count the cost of the default network at 1024x2048 and compare one MMRFC
block with a plain 3x3 convolution of the same width.
"""
from eadnet.cost import analyze_graph, mmrfc_total_params, plain_conv3x3_params
from eadnet.network import eadnet_graph

# %%
# One block at 128 channels against a dense 3x3 conv.
block, dense = mmrfc_total_params(128), plain_conv3x3_params(128)
print(f"MMRFC(128): {block:,} params, dense 3x3: {dense:,} params, ratio {block / dense:.3f}")

# %%
# Whole network, per stage.
report = analyze_graph(eadnet_graph(), (1024, 2048))
stages = {}
for layer in report.layers:
    key = layer.name.split(".")[0]
    p, f = stages.get(key, (0, 0))
    stages[key] = (p + layer.params, f + layer.flops)
for key, (p, f) in stages.items():
    print(f"{key:<12} {p:>9,} params {f / 1e9:7.3f} GFLOPs")

# %%
# Totals. Batch-norm and PReLU parameters are reported separately.
print(f"total {report.total_params:,} params (+{report.total_params_aux:,} bn/prelu), "
      f"{report.total_flops / 1e9:.2f} GFLOPs")
