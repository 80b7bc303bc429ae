"""The mutable form canvas and its editing API.

Agents edit a form through four actions — PlaceText, DeleteText,
SignOrInitial, Terminate — plus PlaceByFieldName for the field-name toolset.
This module owns action parsing from model output, action application with
per-action feedback, deterministic text rendering, and the coordinate-grid
overlay used by the grid-assisted toolset.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from formbench import imgio
from formbench.errors import ConfigurationError, EpisodeOverError
from formbench.geometry import BBox, Point, contains, denormalize
from formbench.geometry import center as bbox_center

# Fixed monospace-style metrics so placed-text boxes are reproducible:
# glyph advance is 0.6 of the font height.
DEFAULT_FONT_HEIGHT_FRAC = 0.02
CHAR_ADVANCE_RATIO = 0.6

# Ink colors (RGB). Plain text is solid dark blue; signatures use the same
# ink but are rendered with an italic shear.
TEXT_COLOR = (16, 32, 128)
SIGNATURE_COLOR = (16, 32, 128)
SIGNATURE_SHEAR = 0.25

# Grid overlay bounds: fewer than 2 cells is no grid, more than 50 makes
# the vertex labels unreadable.
MIN_GRID_N = 2
MAX_GRID_N = 50
GRID_LINE_COLOR = (255, 0, 0)
GRID_LABEL_COLOR = (255, 0, 0)


class ItemKind(Enum):
    TEXT = "TEXT"
    SIGNATURE = "SIGNATURE"


@dataclass(frozen=True)
class PlacedItem:
    """One piece of text or signature ink placed on the canvas."""

    item_id: int
    kind: ItemKind
    value: str
    center: Point
    bbox: BBox
    round_placed: int = 0

    def __post_init__(self) -> None:
        if not self.value:
            raise ValueError("placed item value must be non-empty")


# -- actions -----------------------------------------------------------------


@dataclass(frozen=True)
class PlaceText:
    cx: float
    cy: float
    value: str


@dataclass(frozen=True)
class DeleteText:
    x: float
    y: float


@dataclass(frozen=True)
class SignOrInitial:
    cx: float
    cy: float
    value: str


@dataclass(frozen=True)
class PlaceByFieldName:
    field_name: str
    value: str


@dataclass(frozen=True)
class Terminate:
    pass


Action = Union[PlaceText, DeleteText, SignOrInitial, PlaceByFieldName, Terminate]

ACTION_TAGS = {
    "PlaceText": PlaceText,
    "DeleteText": DeleteText,
    "SignOrInitial": SignOrInitial,
    "PlaceByFieldName": PlaceByFieldName,
    "Terminate": Terminate,
}


def action_to_json(action: Action) -> dict:
    """Serialize an action back to its wire-format dict."""
    if isinstance(action, PlaceText):
        return {"action": "PlaceText", "cx": action.cx, "cy": action.cy, "value": action.value}
    if isinstance(action, DeleteText):
        return {"action": "DeleteText", "x": action.x, "y": action.y}
    if isinstance(action, SignOrInitial):
        return {"action": "SignOrInitial", "cx": action.cx, "cy": action.cy, "value": action.value}
    if isinstance(action, PlaceByFieldName):
        return {"action": "PlaceByFieldName", "field_name": action.field_name, "value": action.value}
    if isinstance(action, Terminate):
        return {"action": "Terminate"}
    raise TypeError(f"not an action: {action!r}")


class FeedbackStatus(Enum):
    OK = "OK"
    PARSE_ERROR = "PARSE_ERROR"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
    EMPTY_VALUE = "EMPTY_VALUE"
    NOTHING_DELETED = "NOTHING_DELETED"
    WRONG_TOOLSET = "WRONG_TOOLSET"
    LOCALIZATION_FAILED = "LOCALIZATION_FAILED"
    # Synthesized by the episode runner for actions that trail a Terminate in
    # the same response, so every action still gets index-aligned feedback.
    IGNORED_AFTER_TERMINATE = "IGNORED_AFTER_TERMINATE"


@dataclass(frozen=True)
class ActionFeedback:
    """Outcome of one action, index-aligned with the model's action list."""

    action_index: int
    status: FeedbackStatus
    detail: str = ""
    deleted_count: int = 0

    def to_json(self) -> dict:
        out = {
            "action_index": self.action_index,
            "status": self.status.value,
            "detail": self.detail,
        }
        if self.deleted_count:
            out["deleted_count"] = self.deleted_count
        return out


@dataclass
class Canvas:
    """Episode state: the base form image plus the items placed so far.

    Single-writer — exactly one episode mutates a canvas; rendering works on
    a snapshot copy.  ``round_index`` is advanced by the episode runner so
    items record when they were placed.
    """

    base: np.ndarray
    doc_id: str = ""
    items: List[PlacedItem] = field(default_factory=list)
    terminated: bool = False
    font_height_frac: float = DEFAULT_FONT_HEIGHT_FRAC
    font_path: Optional[str] = None
    round_index: int = 0
    _next_item_id: int = 0

    @property
    def width(self) -> int:
        return int(self.base.shape[1])

    @property
    def height(self) -> int:
        return int(self.base.shape[0])

    def allocate_item_id(self) -> int:
        item_id = self._next_item_id
        self._next_item_id += 1
        return item_id


def new_canvas(base: np.ndarray, doc_id: str = "",
               font_height_frac: float = DEFAULT_FONT_HEIGHT_FRAC) -> Canvas:
    """Create an episode canvas over a copy of ``base``."""
    return Canvas(base=base.copy(), doc_id=doc_id, font_height_frac=font_height_frac)


# -- action parsing -----------------------------------------------------------


def _first_json_array(text: str):
    """Return the first well-formed JSON array anywhere in ``text``, or None."""
    decoder = json.JSONDecoder()
    start = text.find("[")
    while start != -1:
        try:
            value, _end = decoder.raw_decode(text, start)
        except ValueError:
            value = None
        if isinstance(value, list):
            return value
        start = text.find("[", start + 1)
    return None


def _coerce_value(raw) -> Optional[str]:
    """Accept strings directly and numbers by stringification."""
    if isinstance(raw, str):
        return raw
    if isinstance(raw, bool):
        return None
    if isinstance(raw, (int, float)):
        return json.dumps(raw)
    return None


def _coerce_coord(raw) -> Optional[float]:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        return None
    return float(raw)


def _element_to_action(element) -> Tuple[Optional[Action], str]:
    """Parse one array element; returns (action, "") or (None, reason)."""
    if not isinstance(element, dict):
        return None, f"expected an object, got {type(element).__name__}"
    tag = element.get("action")
    if not isinstance(tag, str) or tag not in ACTION_TAGS:
        return None, f"unrecognized action tag: {tag!r}"

    if tag == "Terminate":
        return Terminate(), ""

    if tag == "DeleteText":
        # The API doc names the parameters (x, y); (cx, cy) is accepted too.
        x = _coerce_coord(element.get("x", element.get("cx")))
        y = _coerce_coord(element.get("y", element.get("cy")))
        if x is None or y is None:
            return None, "DeleteText requires numeric x and y"
        return DeleteText(x=x, y=y), ""

    if tag == "PlaceByFieldName":
        name = element.get("field_name")
        value = _coerce_value(element.get("value"))
        if not isinstance(name, str) or not name:
            return None, "PlaceByFieldName requires a non-empty field_name"
        if value is None:
            return None, "PlaceByFieldName requires a string value"
        return PlaceByFieldName(field_name=name, value=value), ""

    # PlaceText / SignOrInitial share a shape.
    cx = _coerce_coord(element.get("cx"))
    cy = _coerce_coord(element.get("cy"))
    value = _coerce_value(element.get("value"))
    if cx is None or cy is None:
        return None, f"{tag} requires numeric cx and cy"
    if value is None:
        return None, f"{tag} requires a string value"
    cls = ACTION_TAGS[tag]
    return cls(cx=cx, cy=cy, value=value), ""


def parse_actions_indexed(
    response_text: str,
) -> Tuple[List[Tuple[int, Action]], List[ActionFeedback]]:
    """Parse model output, keeping each action's element index.

    Returns (indexed actions, parse-error feedback).  The episode runner
    merges apply-time feedback with the parse errors by element index.
    """
    array = _first_json_array(response_text)
    if array is None:
        return [], [
            ActionFeedback(
                action_index=0,
                status=FeedbackStatus.PARSE_ERROR,
                detail="no JSON array found in response",
            )
        ]
    actions: List[Tuple[int, Action]] = []
    errors: List[ActionFeedback] = []
    for index, element in enumerate(array):
        action, reason = _element_to_action(element)
        if action is None:
            errors.append(
                ActionFeedback(
                    action_index=index,
                    status=FeedbackStatus.PARSE_ERROR,
                    detail=reason,
                )
            )
        else:
            actions.append((index, action))
    return actions, errors


def parse_actions(response_text: str) -> Tuple[List[Action], List[ActionFeedback]]:
    """Extract the first JSON action array from model output.

    Well-formed elements become actions (order preserved); malformed ones
    yield PARSE_ERROR feedback at their element index.  No array at all
    yields zero actions and a single PARSE_ERROR.
    """
    indexed, errors = parse_actions_indexed(response_text)
    return [action for _index, action in indexed], errors


# -- geometry of placed text ---------------------------------------------------


def estimate_text_bbox(
    value: str,
    center_point: Point,
    font_height_frac: float,
    width: int,
    height: int,
) -> BBox:
    """Size and position the box for a run of placed text.

    Height is ``font_height_frac`` of the page; width assumes a fixed glyph
    advance of 0.6 × font height per character.  A box that overhangs the
    page is translated (never shrunk) back inside; text wider than the page
    spans the full width.
    """
    if not value:
        raise ValueError("value must be non-empty")
    h = min(float(font_height_frac), 1.0)
    width_px = max(1, int(math.floor(CHAR_ADVANCE_RATIO * font_height_frac * height * len(value) + 0.5)))
    w = width_px / width

    x0 = center_point.x - w / 2.0
    x1 = x0 + w
    if x1 > 1.0:
        x0 -= x1 - 1.0
        x1 = 1.0
    if x0 < 0.0:
        x0 = 0.0
        x1 = min(1.0, x0 + w)

    y0 = center_point.y - h / 2.0
    y1 = y0 + h
    if y1 > 1.0:
        y0 -= y1 - 1.0
        y1 = 1.0
    if y0 < 0.0:
        y0 = 0.0
        y1 = min(1.0, y0 + h)

    return BBox(x0, y0, x1, y1)


def place_item(
    canvas: Canvas,
    cx: float,
    cy: float,
    value: str,
    kind: ItemKind,
    action_index: int = 0,
    font_height_frac: Optional[float] = None,
) -> ActionFeedback:
    """Shared placement path for PlaceText, SignOrInitial, and by-name placement."""
    if canvas.terminated:
        raise EpisodeOverError("action applied to a terminated canvas")
    if value == "":
        return ActionFeedback(action_index, FeedbackStatus.EMPTY_VALUE,
                              "value must be non-empty")
    requested = Point(cx, cy)
    if not requested.in_unit_square:
        return ActionFeedback(
            action_index,
            FeedbackStatus.OUT_OF_BOUNDS,
            f"({cx:g}, {cy:g}) is outside the page",
        )
    frac = canvas.font_height_frac if font_height_frac is None else font_height_frac
    bbox = estimate_text_bbox(value, requested, frac, canvas.width, canvas.height)
    item = PlacedItem(
        item_id=canvas.allocate_item_id(),
        kind=kind,
        value=value,
        center=bbox_center(bbox),
        bbox=bbox,
        round_placed=canvas.round_index,
    )
    canvas.items.append(item)
    return ActionFeedback(action_index, FeedbackStatus.OK,
                          f"placed {kind.value.lower()} item {item.item_id}")


def apply_action(canvas: Canvas, action: Action, action_index: int = 0) -> ActionFeedback:
    """Apply one action to the canvas, returning its feedback.

    Calling this on a terminated canvas is a harness bug and raises
    EpisodeOverError rather than returning feedback.  PlaceByFieldName is
    not handled here — it needs a localization backend; the episode runner
    routes it separately.
    """
    if canvas.terminated:
        raise EpisodeOverError("action applied to a terminated canvas")

    if isinstance(action, Terminate):
        canvas.terminated = True
        return ActionFeedback(action_index, FeedbackStatus.OK, "terminated")

    if isinstance(action, (PlaceText, SignOrInitial)):
        kind = ItemKind.TEXT if isinstance(action, PlaceText) else ItemKind.SIGNATURE
        return place_item(canvas, action.cx, action.cy, action.value, kind, action_index)

    if isinstance(action, DeleteText):
        point = Point(action.x, action.y)
        if not point.in_unit_square:
            return ActionFeedback(
                action_index,
                FeedbackStatus.OUT_OF_BOUNDS,
                f"({action.x:g}, {action.y:g}) is outside the page",
            )
        kept = [item for item in canvas.items if not contains(item.bbox, point)]
        deleted = len(canvas.items) - len(kept)
        if deleted == 0:
            return ActionFeedback(action_index, FeedbackStatus.NOTHING_DELETED,
                                  "no item intersects that point")
        canvas.items[:] = kept
        return ActionFeedback(action_index, FeedbackStatus.OK,
                              f"deleted {deleted} item(s)", deleted_count=deleted)

    if isinstance(action, PlaceByFieldName):
        raise TypeError(
            "PlaceByFieldName needs a localization backend; "
            "route it through formbench.localization.place_by_field_name"
        )

    raise TypeError(f"not an action: {action!r}")


# -- rendering ----------------------------------------------------------------


def _load_font(font_path: Optional[str], size: int) -> ImageFont.ImageFont:
    if font_path is None:
        return ImageFont.load_default(size=size)
    try:
        return ImageFont.truetype(font_path, size=size)
    except OSError as exc:
        raise ConfigurationError(f"cannot load font asset {font_path!r}: {exc}") from exc


def _ink_mask(value: str, font: ImageFont.ImageFont, shear: float = 0.0) -> Image.Image:
    """Draw ``value`` onto a tight grayscale mask (white ink on black)."""
    left, top, right, bottom = font.getbbox(value)
    w = max(1, right - left)
    h = max(1, bottom - top)
    pad = int(math.ceil(abs(shear) * h))
    mask = Image.new("L", (w + pad, h), 0)
    draw = ImageDraw.Draw(mask)
    draw.text((-left, -top), value, font=font, fill=255)
    if shear:
        # Lean the glyphs: output x samples input x + shear*y − pad, which
        # keeps the ink inside the padded mask at both the top and bottom rows.
        mask = mask.transform(
            mask.size, Image.AFFINE, (1.0, shear, -float(pad), 0.0, 1.0, 0.0),
            resample=Image.BILINEAR, fillcolor=0,
        )
    return mask


def render(canvas: Canvas) -> np.ndarray:
    """Rasterize the canvas: base image plus every placed item's ink.

    Deterministic for a fixed canvas and font asset; pixels outside item
    boxes are untouched.
    """
    out = canvas.base.copy()
    if not canvas.items:
        return out
    height, width = out.shape[:2]
    for item in canvas.items:
        pb = denormalize(item.bbox, width, height)
        pw = pb.px1 - pb.px0
        ph = pb.py1 - pb.py0
        shear = SIGNATURE_SHEAR if item.kind is ItemKind.SIGNATURE else 0.0
        color = SIGNATURE_COLOR if item.kind is ItemKind.SIGNATURE else TEXT_COLOR
        font = _load_font(canvas.font_path, size=max(8, ph * 2))
        mask = _ink_mask(item.value, font, shear=shear).resize((pw, ph), Image.BILINEAR)
        weights = np.asarray(mask, dtype=np.float64)[:, :, None] / 255.0
        region = out[pb.py0:pb.py1, pb.px0:pb.px1, :].astype(np.float64)
        ink = np.asarray(color, dtype=np.float64)[None, None, :]
        blended = region * (1.0 - weights) + ink * weights
        out[pb.py0:pb.py1, pb.px0:pb.px1, :] = np.floor(blended + 0.5).astype(np.uint8)
    return out


# -- coordinate-grid overlay ---------------------------------------------------


def som_vertex_labels(grid_n: int) -> List[Tuple[float, float, str]]:
    """The (grid_n − 1)² interior vertex labels of the coordinate grid."""
    if grid_n < MIN_GRID_N:
        raise ValueError(f"grid_n must be at least {MIN_GRID_N}, got {grid_n}")
    if grid_n > MAX_GRID_N:
        raise ValueError(
            f"grid_n {grid_n} exceeds {MAX_GRID_N}; vertex labels would be unreadable"
        )
    labels = []
    for j in range(1, grid_n):
        for i in range(1, grid_n):
            x = round(i / grid_n, 3)
            y = round(j / grid_n, 3)
            labels.append((x, y, f"({x:g}, {y:g})"))
    return labels


def overlay_set_of_marks(image: np.ndarray, grid_n: int = 10) -> np.ndarray:
    """Overlay a coordinate-reference grid: thin lines at i/grid_n fractions
    on both axes, with the normalized coordinate pair printed at each
    interior vertex.  Pixels off the lines and labels are unchanged.
    """
    labels = som_vertex_labels(grid_n)  # validates grid_n
    pil = imgio.to_image(image)
    draw = ImageDraw.Draw(pil)
    width, height = pil.width, pil.height
    label_size = max(8, int(round(height * 0.008)))
    font = ImageFont.load_default(size=label_size)
    for i in range(1, grid_n):
        x = int(round(i / grid_n * width))
        draw.line([(x, 0), (x, height - 1)], fill=GRID_LINE_COLOR, width=1)
    for j in range(1, grid_n):
        y = int(round(j / grid_n * height))
        draw.line([(0, y), (width - 1, y)], fill=GRID_LINE_COLOR, width=1)
    for x_frac, y_frac, text in labels:
        px = int(round(x_frac * width)) + 2
        py = int(round(y_frac * height)) + 2
        draw.text((px, py), text, fill=GRID_LABEL_COLOR, font=font)
    return imgio.to_array(pil)
