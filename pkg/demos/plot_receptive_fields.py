"""
Four rectangles per block
=========================

Each MMRFC branch sees a differently shaped window. We compute the windows
analytically, then probe a block with an impulse to confirm them.
"""
from eadnet.cost import receptive_field_report
from eadnet.footprint import branch_impulse_footprints
from eadnet.mmrfc import branch_receptive_field, branch_specs
from eadnet.network import eadnet_graph

# %%
# Analytic windows at feature resolution, for each base dilation.
for dr in range(1, 7):
    print(dr, [branch_receptive_field(s) for s in branch_specs(dr)])

# %%
# Impulse footprints of a neutralised block (all-ones weights, identity BN).
print(6, branch_impulse_footprints(6))

# %%
# Inside the network a dr=6 block runs at 1/8 resolution, so its tall
# and wide branches cover this many image pixels.
for row in receptive_field_report(eadnet_graph()):
    if row.kind == "mmrfc" and any(b.dilation[0] == 24 for b in row.branches):
        print(row.name, [b.image for b in row.branches])
        break
