"""Integer-grid cell-counting oracles for box geometry.

A normalized box [x1, y1, x2, y2] on the 0..1000 grid covers the unit cells
[i, i+1) x [j, j+1) for i in [x1, x2) and j in [y1, y2).  These oracles count
cells by explicit enumeration instead of the analytic min/max intersection
formula, so they can stand as an independent check of the library's IoU.
"""


def _axis_cells(lo, hi):
    """Set of unit-cell indices covered along one axis."""
    return set(range(lo, hi))


def cell_count_area(box):
    x1, y1, x2, y2 = box
    return len(_axis_cells(x1, x2)) * len(_axis_cells(y1, y2))


def cell_count_intersection(a, b):
    xs = _axis_cells(a[0], a[2]) & _axis_cells(b[0], b[2])
    ys = _axis_cells(a[1], a[3]) & _axis_cells(b[1], b[3])
    return len(xs) * len(ys)


def cell_count_iou(a, b):
    """IoU via per-axis cell enumeration (product form for the 2-D counts)."""
    inter = cell_count_intersection(a, b)
    union = cell_count_area(a) + cell_count_area(b) - inter
    return inter / union


def cell_set_iou_2d(a, b):
    """Fully two-dimensional cell-set IoU.

    Quadratic in box extent -- use on small boxes only.  Exists to validate
    the product-form counting used by cell_count_iou.
    """
    cells_a = {(i, j) for i in range(a[0], a[2]) for j in range(a[1], a[3])}
    cells_b = {(i, j) for i in range(b[0], b[2]) for j in range(b[1], b[3])}
    return len(cells_a & cells_b) / len(cells_a | cells_b)
