"""
Temporal overlap between datasets
=================================

Free-text temporal coverage is turned into YYYY-MM-DD-YYYY-MM-DD ranges by one
model call each (here the rule-based mock), then compared day by day. The
overlap fraction is one-sided: row i, column j is the share of dataset i's
days that dataset j also covers.
"""

from datetime import date

import numpy as np

from metaharvest.gateway import mock_gateway
from metaharvest.linking import normalize_temporal_coverage, overlap_matrix
from metaharvest.mock import HeuristicResponder

coverage = {
    "ecotope-map-2016": "2010-12-08 to 2016-11-01",
    "ecotope-map-2017": "2017",
    "oak-distribution": "2000-01-01 00:00:00 UTC – 2020-12-31 00:00:00 UTC",
    "ebird": "January 1, 1800 - December 31, 2023",
    "camera-trap-p1": "August 13th 2021 - August 2023",
    "camera-trap-p2": "August 14, 2021 - September 24, 2021",
    "camera-trap-p3": "March 1, 2023 - March 31, 2023",
    "luh2-belgium": "Present to 2050",
    "modis": "2000-02-18 to Present",
}

# "Present" means the day the coverage was normalized
present = date(2025, 6, 7)
gateway = mock_gateway(responder=HeuristicResponder())

ranges = {}
for sid, text in coverage.items():
    ranges[sid] = normalize_temporal_coverage(text, present, gateway)
    print(f"{sid:18s} {text:52s} -> {ranges[sid]}")

m = overlap_matrix(ranges)

# P2 lies inside P1, so P2 is fully covered by P1 but not the other way round
print()
print("P2 covered by P1:", m["camera-trap-p2", "camera-trap-p1"])
print("P1 covered by P2: %.4f" % m["camera-trap-p1", "camera-trap-p2"])

# the numerators agree: overlap days are symmetric even though fractions are not
days = np.array([ranges[i].days for i in m.ids])
shared_days = m.values * days[:, None]
print("overlap days symmetric:", np.allclose(shared_days, shared_days.T))

print()
print(m.to_csv())
