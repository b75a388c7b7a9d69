"""Built-in model variants shipped with socialdiff."""

from socialdiff.variants.bpr import BPR
from socialdiff.variants.diffnet import DiffNet
from socialdiff.variants.diffnetpp import DiffNetPlusPlus

BUILTIN_VARIANTS = (DiffNetPlusPlus, DiffNet, BPR)

__all__ = ["BPR", "BUILTIN_VARIANTS", "DiffNet", "DiffNetPlusPlus"]
