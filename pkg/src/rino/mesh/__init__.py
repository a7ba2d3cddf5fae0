from .core import (
    GeodesicField,
    Mesh,
    MeshError,
    area_centroid,
    edge_graph,
    geodesic_distances,
    geodesic_matrix,
    knn_graph,
    normalize_unit_area,
    perturb_gaussian,
)
from .io import (
    MeshParseError,
    load_mesh,
    parse_mesh,
    read_labels,
    read_ply_with_colors,
    save_mesh,
    serialize_mesh,
    write_labels,
)
from .synthetic import bent_bar, gen_synthetic, icosphere, mirror_map, sym_blob

__all__ = [
    "GeodesicField", "Mesh", "MeshError", "MeshParseError", "area_centroid", "bent_bar",
    "edge_graph", "gen_synthetic", "geodesic_distances", "geodesic_matrix", "icosphere",
    "knn_graph", "load_mesh", "mirror_map", "normalize_unit_area", "parse_mesh",
    "perturb_gaussian", "read_labels", "read_ply_with_colors", "save_mesh",
    "serialize_mesh", "sym_blob", "write_labels",
]
