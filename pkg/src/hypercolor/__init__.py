"""Two-stage hypernetwork pipeline for colored point clouds and meshes."""
