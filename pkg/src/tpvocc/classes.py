"""Default 18-class label set (17 semantic categories + free).

Ids follow the common driving-occupancy convention with ``free`` last;
the palette is the customary visualization coloring, index = class id.
"""

CLASS_NAMES = (
    "others",
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
    "driveable_surface",
    "other_flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
    "free",
)

NUM_CLASSES = len(CLASS_NAMES)
FREE_CLASS = NUM_CLASSES - 1
GROUND_CLASS = CLASS_NAMES.index("driveable_surface")

PALETTE = (
    (0, 0, 0),
    (255, 120, 50),
    (255, 192, 203),
    (255, 255, 0),
    (0, 150, 245),
    (0, 255, 255),
    (200, 180, 0),
    (255, 0, 0),
    (255, 240, 150),
    (135, 60, 0),
    (160, 32, 240),
    (255, 0, 255),
    (139, 137, 137),
    (75, 0, 75),
    (150, 240, 80),
    (230, 230, 255),
    (0, 175, 0),
    (255, 255, 255),
)
