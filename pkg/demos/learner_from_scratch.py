"""Train the numpy MLP on noise-free ShapeColor renders and report accuracy."""
from advrand import learner as L
from advrand import renderer as R
from advrand.seeding import derive_seed, make_rng

space = R.RenderSpace.shape_color(hardness=0.0)
g = R.ShapeColorSimulator(space)
h = L.init_mlp([space.n_pixels, 64, len(space.palette)], make_rng(0, "init"))
rng = make_rng(0, "cells")

xt, yt = g.render_batch(list(range(space.cardinality)), [derive_seed(0, "eval", c) for c in range(space.cardinality)])
for step in range(201):
    cells = rng.integers(0, space.cardinality, size=32)
    x, y = g.render_batch(list(cells), [derive_seed(0, "train", step, i) for i in range(32)])
    h = L.sgd_step(h, L.backward(h, x, y, "cross_entropy_softmax"), 0.05)
    if step % 50 == 0:
        rep = L.evaluate(h, xt, yt, "cross_entropy_softmax")
        print(f"step {step:4d}  loss {rep.mean_loss:.4f}  acc {rep.accuracy:.3f}")
