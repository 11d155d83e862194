"""Independent reference computations for the split tests."""

import itertools
import statistics


def spreadsheet_terms(subsets):
    """Recompute the three variance terms with plain Python lists.

    ``subsets`` is three lists of CameraProfile.
    """
    n_classes = len(subsets[0][0].class_counts)
    n_sizes = len(subsets[0][0].size_counts[0])
    per_subset = []
    for cams in subsets:
        images = sum(c.image_count for c in cams)
        cls = [sum(float(c.class_counts[m]) for c in cams) / images for m in range(n_classes)]
        size = [[sum(float(c.size_counts[m][p]) for c in cams) / images for p in range(n_sizes)]
                for m in range(n_classes)]
        ratio = []
        for m in range(n_classes):
            day = sum(float(c.day_counts[m]) for c in cams)
            night = sum(float(c.night_counts[m]) for c in cams)
            ratio.append(None if day + night == 0 else day / (day + night))
        per_subset.append((cls, size, ratio))

    class_var = sum(statistics.pvariance([s[0][m] for s in per_subset]) for m in range(n_classes))
    size_var = sum(statistics.pvariance([s[1][m][p] for s in per_subset])
                   for m in range(n_classes) for p in range(n_sizes))
    ratio_var = 0.0
    for m in range(n_classes):
        vals = [s[2][m] for s in per_subset if s[2][m] is not None]
        if len(vals) >= 2:
            ratio_var += statistics.pvariance(vals)
    return class_var, size_var, ratio_var


def naive_partitions(profiles, sizes, forced, max_eval_fraction):
    """Every labelling of cameras with 1/2/3 that satisfies the constraints."""
    cams = [p.camera_id for p in profiles]
    by_id = {p.camera_id: p for p in profiles}
    total = sum(p.image_count for p in profiles)
    for labels in itertools.product((1, 2, 3), repeat=len(cams)):
        if tuple(labels.count(s) for s in (1, 2, 3)) != tuple(sizes):
            continue
        if any(labels[cams.index(c)] != s for c, s in forced.items()):
            continue
        groups = [[by_id[c] for c, l in zip(cams, labels) if l == s] for s in (1, 2, 3)]
        if any(sum(p.image_count for p in g) > max_eval_fraction * total for g in groups[1:]):
            continue
        yield groups
