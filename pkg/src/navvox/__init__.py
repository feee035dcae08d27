"""navvox: offline navigation-mesh validation against geometry-derived walkable space.

The toolkit reconstructs walkable space from terrain heightfields and collision
meshes as a voxel grid, builds a walkability graph, and compares reachability
in that graph against reachability on a navigation mesh. Disagreements are
tolerance-filtered, clustered, and written to machine-readable reports.
Exploration of large grids can be driven by uniform/heuristic strategies or a
learned value-based policy.
"""

__version__ = "0.1.0"
