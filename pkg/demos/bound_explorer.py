"""Evaluate the multi-source bound and show where an ensemble of sources wins."""
from advrand import theory as T

one = T.BoundInputs(d_vc=10, m=1000, delta=0.1, alpha=[1.0], beta=[1.0])
print("single source, no shift:", round(T.multi_source_bound(one).total, 4))

two = T.BoundInputs.uniform(2, d_vc=10, m=1000, delta=0.1, div=[0.1, 0.5])
print("uniform mix of two sources:", round(T.uniform_multi_bound(two), 4))
for k in range(2):
    print(f"  source {k} alone:", round(T.single_source_bound(two, k), 4))

for row in T.sweep_n([0.1, 0.5, 0.3, 0.2], d_vc=10, m=1000, delta=0.1):
    print(f"N={row['N']}  mean s={row['s_mean']:.3f}  bound={row['total']:.4f}")
