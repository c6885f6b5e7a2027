"""Image-folder to EMB1 feature export with a torchvision backbone."""

from .emb1 import write_emb1
from .export import BACKBONES, ExportError, ExportSpec, export

__all__ = ["BACKBONES", "ExportError", "ExportSpec", "export", "write_emb1"]
__version__ = "0.1.0"
