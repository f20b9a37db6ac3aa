"""Reference count-table fixtures for the metric formulas.

Each scan row carries the ground-truth count and, per map arm (one side A,
one side B, both sides merged), the calculated count with its expected
accuracy, precision, recall, and F1 values. Accuracy cells mix rounding and
truncation at 2 decimal places, so comparisons allow both conventions.
"""

# (calculated, accuracy_pct, precision, recall, f1)
Arm = tuple[int, float, float, float, float]

# ground_truth, side A arm, side B arm, both-sides arm
REFERENCE_ROWS: tuple[tuple[int, Arm, Arm, Arm], ...] = (
    (52, (29, 55.76, 0.966, 0.875, 0.918), (35, 67.30, 0.914, 1.000, 0.955), (63, 78.84, 0.762, 0.923, 0.835)),
    (53, (28, 52.83, 0.964, 0.871, 0.915), (39, 73.58, 0.846, 0.971, 0.904), (60, 86.79, 0.817, 0.925, 0.868)),
    (61, (45, 73.77, 0.867, 1.000, 0.929), (30, 49.18, 0.967, 0.935, 0.951), (59, 96.72, 0.915, 0.885, 0.900)),
    (69, (58, 84.05, 0.914, 0.964, 0.938), (36, 52.17, 1.000, 0.923, 0.960), (71, 97.10, 0.930, 0.957, 0.943)),
    (46, (42, 91.30, 0.857, 0.900, 0.878), (45, 97.82, 0.956, 0.977, 0.966), (59, 71.73, 0.695, 0.911, 0.788)),
    (59, (44, 74.57, 0.932, 0.976, 0.953), (56, 94.91, 0.929, 0.963, 0.946), (78, 67.79, 0.744, 0.983, 0.847)),
    (48, (37, 77.08, 0.919, 0.895, 0.907), (28, 58.33, 0.857, 0.774, 0.813), (47, 97.91, 0.872, 0.854, 0.863)),
    (37, (31, 83.78, 0.903, 0.933, 0.918), (28, 75.67, 0.964, 0.818, 0.885), (36, 97.29, 0.972, 0.946, 0.959)),
    (40, (29, 72.50, 0.862, 0.893, 0.877), (31, 77.50, 0.839, 1.000, 0.912), (57, 57.50, 0.684, 0.975, 0.804)),
    (50, (37, 74.00, 0.865, 0.865, 0.865), (44, 88.00, 0.818, 0.947, 0.878), (70, 60.00, 0.643, 0.900, 0.750)),
)


def iter_arms():
    """Yield (ground_truth, calculated, accuracy, precision, recall, f1) per arm."""
    for ground_truth, *arms in REFERENCE_ROWS:
        for calculated, accuracy, precision, recall, f1 in arms:
            yield ground_truth, calculated, accuracy, precision, recall, f1
