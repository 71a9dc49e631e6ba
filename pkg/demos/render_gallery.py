"""Render a few ShapeColor objects and GridSpawn scenes to PPM files."""
import sys
from pathlib import Path

import numpy as np

from advrand import renderer as R

out = Path(sys.argv[1] if len(sys.argv) > 1 else "gallery")
out.mkdir(parents=True, exist_ok=True)

space = R.RenderSpace.shape_color()
g = R.ShapeColorSimulator(space)
for cell in (0, 41, 125, 251):
    s = g.render(cell, seed=cell)
    shape, material, color, size = R.cell_to_theta(space, cell)
    name = f"shape_{R.SHAPES[shape]}_{R.MATERIALS[material]}_{R.COLOR_NAMES[color]}_s{size}.ppm"
    R.write_ppm(out / name, s.image)
    print(name, "label", R.COLOR_NAMES[s.label])

gs = R.RenderSpace.grid_spawn()
gg = R.GridSpawnSimulator(gs)
scene = gg.render((0, 7, 13, 30), seed=1)
R.write_ppm(out / "scene.ppm", scene.image)
print("occupancy (0 empty, 1 car, 2 person)\n", scene.label)
print("wrote", len(list(out.glob("*.ppm"))), "images to", out)
