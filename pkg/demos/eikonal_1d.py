"""Why the Eikonal term alone is not enough, in one dimension.

Both profiles have |f'| = 1 in every cell and the same zeros at 0.25 and
0.75, so the plain Eikonal loss cannot tell them apart. The viscosity term
penalizes the zigzag's folds through the Laplacian.
"""
from gridsdf.eikonal1d import eikonal_loss, sdf_profile, viscosity_loss, zigzag_profile

sdf, zig = sdf_profile(), zigzag_profile()
for eps in (1e-3, 1e-2):
    print(f"epsilon {eps:<6}: sdf {viscosity_loss(sdf, eps):.3e}  zigzag {viscosity_loss(zig, eps):.3e}")
print(f"eikonal only : sdf {eikonal_loss(sdf):.1e}  zigzag {eikonal_loss(zig):.1e}")
print("zigzag f:", " ".join(f"{v:+.3f}" for v in zig.f[:12]), "...")
