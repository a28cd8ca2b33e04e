"""Published CryoNuSeg scores used as static comparison rows in reports.

Percentages. Fold order is the sorted organ order, which is also the order
:func:`cryoseg.data.make_folds` produces.
"""

BASELINE_AJI = 52.5
BASELINE_PQ = 47.7
TRIPLE_UNET_AJI = 67.41
TRIPLE_UNET_PQ = 50.56

ORGANS = (
    "adrenal gland",
    "larynx",
    "lymph node",
    "mediastinum",
    "pancreas",
    "pleura",
    "skin",
    "testis",
    "thymus",
    "thyroid gland",
)

BASELINE_AJI_BY_ORGAN = dict(zip(ORGANS, (53.49, 59.70, 53.54, 54.10, 44.84, 46.49, 47.84, 50.49, 56.46, 58.20)))
BASELINE_PQ_BY_ORGAN = dict(zip(ORGANS, (48.30, 54.50, 50.79, 50.73, 37.75, 40.02, 40.78, 47.51, 52.83, 53.48)))
TRIPLE_UNET_AJI_BY_ORGAN = dict(zip(ORGANS, (66.82, 72.04, 72.66, 63.90, 63.74, 62.71, 70.72, 68.40, 65.79, 67.36)))
TRIPLE_UNET_PQ_BY_ORGAN = dict(zip(ORGANS, (55.03, 54.37, 49.94, 48.08, 48.02, 45.72, 51.27, 47.76, 48.07, 57.29)))

# per-fold fractions, folds 0..9
BASELINE_AJI_BY_FOLD = (0.5349, 0.5970, 0.5354, 0.5410, 0.4484, 0.4649, 0.4784, 0.5049, 0.5646, 0.582)
BASELINE_PQ_BY_FOLD = (0.4830, 0.5450, 0.5079, 0.5073, 0.3775, 0.4002, 0.4078, 0.4751, 0.5283, 0.5348)


def organ_key(name):
    return "".join(ch for ch in name.lower() if ch.isalnum())


def lookup_organ(table, organ):
    """Find ``organ`` in a per-organ table ignoring case, spaces and underscores."""
    wanted = organ_key(organ)
    for k, v in table.items():
        if organ_key(k) == wanted:
            return v
    return None
