"""
Linking datasets by their descriptions
======================================

Each description is embedded once and compared with every other by cosine
similarity. The mock embedder hashes words into a fixed-length vector, so
descriptions that share vocabulary end up close together.
"""

import numpy as np

from metaharvest import MetadataRecord
from metaharvest.gateway import mock_gateway
from metaharvest.linking import similarity_matrix

descriptions = {
    "camera-trap-p1": "Camera trap images of mammals in the dunes, plot 1.",
    "camera-trap-p2": "Camera trap images of mammals in the dunes, plot 2.",
    "landsat-blue": "Landsat blue band surface reflectance composite.",
    "landsat-green": "Landsat green band surface reflectance composite.",
    "ecotope-map-2016": "Ecotope map of the Wadden Sea for 2016.",
    "no-description": "N/A",
}
records = [
    MetadataRecord(sid, "lter-life", {"Description": text}, "postprocessed") for sid, text in descriptions.items()
]

m = similarity_matrix(records, mock_gateway())
print("left out:", m.metadata["excluded"])

np.set_printoptions(precision=2, suppress=True)
print(m.ids)
print(m.values)

# nearest neighbour of each dataset
for i, sid in enumerate(m.ids):
    row = m.values[i].copy()
    row[i] = -np.inf
    print(f"{sid:18s} closest to {m.ids[int(row.argmax())]}")
