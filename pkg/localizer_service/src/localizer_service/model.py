"""A compact from-scratch grounding model: (form image, field name) → bbox.

The architecture is deliberately small — a few convolutions over a
downsampled grayscale page plus a hashed character-trigram embedding of
the field name, combined by an MLP that emits a box in a center/size
parameterization whose composition is a valid normalized box for any raw
network output:

    x0 = cx * (1 - w),   x1 = x0 + w      (cx, w in (0, 1) via sigmoid)

and likewise for the vertical axis. Prediction is plain deterministic
regression — no sampling — so a fixed checkpoint always answers a given
request with the same box.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from torch import nn

DEFAULT_IMAGE_SIZE = 64
DEFAULT_EMBED_DIM = 32
DEFAULT_VOCAB_BUCKETS = 512

WEIGHTS_FILENAME = "weights.pt"
METADATA_FILENAME = "metadata.json"


def featurize_name(field_name: str, vocab_buckets: int = DEFAULT_VOCAB_BUCKETS
                   ) -> List[int]:
    """Hashed character trigrams of a field name.

    Lowercased and wrapped in boundary markers so one-character names
    still yield a trigram; CRC32 hashing keeps the mapping stable across
    processes (unlike the interpreter's salted ``hash``).
    """
    padded = f"^{field_name.strip().lower()}$"
    return [
        zlib.crc32(padded[i:i + 3].encode("utf-8")) % vocab_buckets
        for i in range(len(padded) - 2)
    ]


def preprocess_image(image: np.ndarray, image_size: int = DEFAULT_IMAGE_SIZE
                     ) -> torch.Tensor:
    """Downsample an (H, W, 3) uint8 page to a (1, S, S) float tensor."""
    pil = Image.fromarray(image).convert("L").resize(
        (image_size, image_size), Image.BILINEAR
    )
    array = np.asarray(pil, dtype=np.float32) / 255.0
    return torch.from_numpy(array).unsqueeze(0)


class CompactGrounder(nn.Module):
    """Conv page encoder + trigram name encoder → box and confidence."""

    def __init__(self, embed_dim: int = DEFAULT_EMBED_DIM,
                 vocab_buckets: int = DEFAULT_VOCAB_BUCKETS,
                 image_size: int = DEFAULT_IMAGE_SIZE):
        super().__init__()
        self.embed_dim = embed_dim
        self.vocab_buckets = vocab_buckets
        self.image_size = image_size
        self.query_embed = nn.EmbeddingBag(vocab_buckets, embed_dim, mode="mean")
        self.encoder = nn.Sequential(
            nn.Conv2d(1, 8, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(4),
        )
        self.image_proj = nn.Linear(16 * 4 * 4, embed_dim)
        self.head = nn.Sequential(
            nn.Linear(3 * embed_dim, 64),
            nn.ReLU(),
            nn.Linear(64, 5),
        )

    def hyperparameters(self) -> Dict[str, int]:
        return {
            "embed_dim": self.embed_dim,
            "vocab_buckets": self.vocab_buckets,
            "image_size": self.image_size,
        }

    def forward(self, images: torch.Tensor, query_indices: torch.Tensor,
                query_offsets: torch.Tensor
                ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Batched forward pass.

        images: (B, 1, S, S); query_indices/offsets: EmbeddingBag layout.
        Returns boxes (B, 4) as [x0, y0, x1, y1] and confidences (B,).
        """
        visual = self.image_proj(self.encoder(images).flatten(1))
        query = self.query_embed(query_indices, query_offsets)
        joint = torch.cat([visual, query, visual * query], dim=1)
        raw = torch.sigmoid(self.head(joint))
        cx, cy, w, h, confidence = raw.unbind(dim=1)
        x0 = cx * (1.0 - w)
        y0 = cy * (1.0 - h)
        boxes = torch.stack([x0, y0, x0 + w, y0 + h], dim=1)
        return boxes, confidence

    def batch_queries(self, field_names: Sequence[str]
                      ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Pack field names into EmbeddingBag indices + offsets."""
        indices: List[int] = []
        offsets: List[int] = []
        for name in field_names:
            offsets.append(len(indices))
            indices.extend(featurize_name(name, self.vocab_buckets))
        return (
            torch.tensor(indices, dtype=torch.long),
            torch.tensor(offsets, dtype=torch.long),
        )

    @torch.no_grad()
    def predict(self, image: np.ndarray, field_name: str
                ) -> Tuple[Tuple[float, float, float, float], float]:
        """Single-example inference: normalized box corners + confidence."""
        self.eval()
        tensor = preprocess_image(image, self.image_size).unsqueeze(0)
        indices, offsets = self.batch_queries([field_name])
        boxes, confidence = self(tensor, indices, offsets)
        x0, y0, x1, y1 = (float(v) for v in boxes[0])
        return (x0, y0, x1, y1), float(confidence[0])


def new_model(seed: int = 0, **hyperparameters) -> CompactGrounder:
    """A freshly initialized model with reproducible weights."""
    torch.manual_seed(seed)
    return CompactGrounder(**hyperparameters)


def save_model(model_dir: Path, model: CompactGrounder, metadata: dict) -> None:
    """Write the model directory: {weights, metadata.json}."""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), model_dir / WEIGHTS_FILENAME)
    payload = dict(metadata)
    payload["hyperparameters"] = model.hyperparameters()
    (model_dir / METADATA_FILENAME).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_model(model_dir: Path) -> Tuple[CompactGrounder, dict]:
    """Load a model directory written by save_model."""
    model_dir = Path(model_dir)
    metadata = json.loads(
        (model_dir / METADATA_FILENAME).read_text(encoding="utf-8")
    )
    model = CompactGrounder(**metadata["hyperparameters"])
    state = torch.load(model_dir / WEIGHTS_FILENAME, map_location="cpu",
                       weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, metadata
