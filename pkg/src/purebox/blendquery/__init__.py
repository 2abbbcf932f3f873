from purebox.blendquery.blend import BlendConfig, naive_blend, robust_blend
from purebox.blendquery.harvest import HarvestResult, harvest_boundary_set, refine_substitute
from purebox.blendquery.search import BoundaryPair, QueryLedger, boundary_search, linear_sweep_search
