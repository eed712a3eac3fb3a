"""roomsplat: layout-guided hybrid Gaussian/polygon scene synthesis.

A semantic layout (oriented labeled boxes in a closed room shell) plus a
scene prompt drive a two-stage optimization of a hybrid scene: 2D-Gaussian
disks for objects, polygons with a learnable hashed appearance field for
the background, supervised by pluggable noise-prediction providers.
"""
from .errors import (ContractError, NumericalError, ParseError, RoomsplatError,
                     TransportError, ValidationError)
from .layout_io import box_room, load_layout, load_point_cloud, save_layout
from .palette import BACKGROUND_LABELS, SemanticPalette, default_palette, load_palette
from .scene import (BackgroundPolygon, ObjectGaussians, RoomShell, SemanticBox,
                    SemanticLayout, polygon_quad, to_world)

__version__ = "0.1.0"
